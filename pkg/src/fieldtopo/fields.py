"""Random field synthesis on vertex grids.

Two models share one sampling geometry:

* Gaussian: F(x) = sum_cells q(x - c) W(cell), the discrete convolution of
  cell-integrated white noise with a kernel stencil. The noise grid extends
  the window by the kernel's support radius (p cells per side), so every
  vertex sees the kernel's full support and the convolution in 'valid' mode
  lands exactly on the vertex grid.
* Shot noise: F(x) = sum_i S_i g(x - P_i) over a marked Poisson process
  sampled on the padded window.

Resampling operators replace the white noise on a half-space or box with
fresh draws; field differences then come from convolving the noise
difference, which is exact by linearity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import convolve, fftconvolve

from ._hot import accumulate_shot_noise
from .errors import GeometryError, KernelError
from .geometry import Box, snap_count, vertex_coordinates, vertex_index_of, vertex_shape
from .kernels import (
    FAMILY_CODES,
    KernelSpec,
    evaluate,
    kernel_derivative,
    support_radius,
)
from .rng import (
    MarkDistribution,
    PointConfiguration,
    RngStream,
    WhiteNoiseGrid,
    sample_poisson_points,
    sample_white_noise,
)

_ALIGN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GridField:
    """Scalar field sampled on the vertex grid of a window."""

    window: Box
    spacing: float
    values: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expect = vertex_shape(self.window, self.spacing)
        if self.values.shape != expect:
            raise GeometryError(
                f"field shape {self.values.shape} does not match grid {expect}"
            )

    @property
    def dim(self) -> int:
        return self.window.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def axis_coordinates(self, axis: int) -> np.ndarray:
        return vertex_coordinates(self.window, self.spacing, axis)

    def value_at(self, point) -> float:
        return float(self.values[vertex_index_of(self.window, self.spacing, point)])


@dataclass(frozen=True, eq=False)
class DeltaField:
    """Difference of two fields synthesized from coupled noise."""

    window: Box
    spacing: float
    values: np.ndarray
    region: str
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


# ---------------------------------------------------------------------------
# gaussian synthesis


def stencil_pad(spec: KernelSpec, spacing: float) -> int:
    """Cells of padding so offsets cover the kernel support."""
    if spacing <= 0:
        raise GeometryError(f"spacing must be positive, got {spacing}")
    return max(1, math.ceil(support_radius(spec) / spacing - 1e-9))


@lru_cache(maxsize=64)
def _stencil_cached(spec: KernelSpec, spacing: float, pad: int, alpha):
    axes = [(np.arange(2 * pad) - pad + 0.5) * spacing] * spec.dim
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    if alpha is None:
        vals = evaluate(spec, pts)
    else:
        vals = kernel_derivative(spec, alpha, pts)
    out = np.asarray(vals, float).reshape((2 * pad,) * spec.dim)
    out.flags.writeable = False
    return out


def gaussian_stencil(spec: KernelSpec, spacing: float, pad: int | None = None,
                     alpha=None) -> np.ndarray:
    """Kernel (or kernel-derivative) values at cell-center offsets.

    Entry [a_1..a_d] holds q(((a - pad) + 1/2) * spacing), the offset from a
    vertex to the center of a noise cell, so convolving noise with this
    stencil evaluates the field exactly at vertices.
    """
    if pad is None:
        pad = stencil_pad(spec, spacing)
    if alpha is not None:
        alpha = tuple(int(a) for a in alpha)
    return _stencil_cached(spec, float(spacing), int(pad), alpha)


def discrete_variance(spec: KernelSpec, spacing: float) -> float:
    """Var F(vertex) implied by the stencil: spacing^d * sum q(offsets)^2."""
    s = gaussian_stencil(spec, spacing)
    return float(spacing**spec.dim * np.sum(s * s))


def white_noise_for(spec: KernelSpec, window: Box, spacing: float,
                    stream: RngStream) -> WhiteNoiseGrid:
    """White noise on the window padded by the kernel support."""
    if window.dim != spec.dim:
        raise GeometryError(f"window dim {window.dim} != kernel dim {spec.dim}")
    p = stencil_pad(spec, spacing)
    counts = tuple(snap_count(s, spacing) for s in window.sides)
    shape = tuple(k + 2 * p for k in counts)
    origin = tuple(l - p * spacing for l in window.lo)
    return sample_white_noise(shape, spacing, stream, origin=origin)


def _check_noise_geometry(spec: KernelSpec, noise: WhiteNoiseGrid, window: Box) -> int:
    if noise.dim != window.dim or noise.dim != spec.dim:
        raise GeometryError("noise/window/kernel dimension mismatch")
    h = noise.spacing
    p = stencil_pad(spec, h)
    counts = tuple(snap_count(s, h) for s in window.sides)
    expect_shape = tuple(k + 2 * p for k in counts)
    if noise.shape != expect_shape:
        raise GeometryError(
            f"noise shape {noise.shape} does not match window plus padding "
            f"{expect_shape}; build it with white_noise_for"
        )
    for lo, o in zip(window.lo, noise.origin):
        if abs((lo - p * h) - o) > _ALIGN_TOL * max(1.0, abs(lo)):
            raise GeometryError("noise origin misaligned with window padding")
    return p


def synthesize_gaussian(spec: KernelSpec, noise: WhiteNoiseGrid, window: Box,
                        method: str = "fft") -> GridField:
    """Convolve white noise with the kernel stencil onto the vertex grid."""
    if spec.normalization != "L2":
        raise KernelError("gaussian synthesis requires an L2-normalized kernel")
    _check_noise_geometry(spec, noise, window)
    s = gaussian_stencil(spec, noise.spacing)
    if method == "fft":
        out = fftconvolve(noise.values, s, mode="valid")
    elif method == "direct":
        out = convolve(noise.values, s, mode="valid", method="direct")
    else:
        raise ValueError(f"method must be 'fft' or 'direct', got {method!r}")
    meta = {"model": "gaussian", "family": spec.family, "b0": spec.b0, "eta": spec.eta}
    return GridField(window=window, spacing=noise.spacing, values=out,
                     kind="gaussian", meta=meta)


def synthesize_gradient(spec: KernelSpec, noise: WhiteNoiseGrid, window: Box,
                        axis: int, method: str = "fft") -> GridField:
    """Partial derivative field from the same noise: convolve with d_axis q."""
    if spec.normalization != "L2":
        raise KernelError("gaussian synthesis requires an L2-normalized kernel")
    if not 0 <= axis < spec.dim:
        raise GeometryError(f"axis {axis} out of range for dim {spec.dim}")
    _check_noise_geometry(spec, noise, window)
    alpha = tuple(1 if a == axis else 0 for a in range(spec.dim))
    s = gaussian_stencil(spec, noise.spacing, alpha=alpha)
    if method == "fft":
        out = fftconvolve(noise.values, s, mode="valid")
    else:
        out = convolve(noise.values, s, mode="valid", method="direct")
    meta = {"model": "gaussian-grad", "axis": axis, "family": spec.family}
    return GridField(window=window, spacing=noise.spacing, values=out,
                     kind="gaussian-grad", meta=meta)


def sample_gaussian_field(spec: KernelSpec, window: Box, spacing: float,
                          stream: RngStream) -> GridField:
    noise = white_noise_for(spec, window, spacing, stream)
    return synthesize_gaussian(spec, noise, window)


# ---------------------------------------------------------------------------
# shot noise


def _padded3(window: Box, spacing: float):
    d = window.dim
    shape_v = vertex_shape(window, spacing)
    shape3 = np.ones(3, dtype=np.int64)
    shape3[:d] = shape_v
    lo3 = np.zeros(3)
    lo3[:d] = window.lo
    return shape_v, shape3, lo3


def synthesize_shot_noise(spec: KernelSpec, points: PointConfiguration,
                          window: Box, spacing: float) -> GridField:
    """Evaluate sum_i S_i g(x - P_i) on the vertex grid."""
    if spec.normalization != "L1":
        raise KernelError("shot noise requires an L1-normalized kernel")
    if points.window.dim != window.dim or window.dim != spec.dim:
        raise GeometryError("points/window/kernel dimension mismatch")
    r = support_radius(spec)
    for pl, wl, ph, wh in zip(points.window.lo, window.lo,
                              points.window.hi, window.hi):
        if pl > wl - r + _ALIGN_TOL or ph < wh + r - _ALIGN_TOL:
            raise GeometryError(
                "point window must cover the field window padded by the "
                f"kernel support radius {r}"
            )
    shape_v, shape3, lo3 = _padded3(window, spacing)
    out = np.zeros(int(np.prod(shape_v)))
    n = points.count
    pts3 = np.zeros((n, 3))
    if n:
        pts3[:, : window.dim] = points.points
    accumulate_shot_noise(
        out, shape3, lo3, float(spacing), pts3,
        np.asarray(points.marks, float),
        FAMILY_CODES[spec.family], spec.b0,
        0.0 if spec.eta is None else spec.eta,
        spec.scale, spec.trunc_radius,
    )
    meta = {"model": "shot", "family": spec.family, "b0": spec.b0,
            "eta": spec.eta, "n_points": n}
    return GridField(window=window, spacing=float(spacing),
                     values=out.reshape(shape_v), kind="shot", meta=meta)


def sample_shot_noise_field(spec: KernelSpec, window: Box, spacing: float,
                            intensity: float, marks: MarkDistribution,
                            stream: RngStream) -> GridField:
    padded = window.pad(support_radius(spec))
    points = sample_poisson_points(padded, intensity, marks, stream)
    fld = synthesize_shot_noise(spec, points, window, spacing)
    fld.meta["intensity"] = float(intensity)
    return fld


# ---------------------------------------------------------------------------
# noise resampling


def _cell_center_grids(noise: WhiteNoiseGrid):
    axes = [noise.cell_centers(ax) for ax in range(noise.dim)]
    return np.meshgrid(*axes, indexing="ij")


def halfspace_cell_mask(noise: WhiteNoiseGrid, i, j) -> np.ndarray:
    """Cells strictly closer (Euclidean) to lattice point j than to i."""
    i = np.asarray(i, float)
    j = np.asarray(j, float)
    if i.shape != (noise.dim,) or j.shape != (noise.dim,):
        raise GeometryError("lattice points must match the noise dimension")
    if np.array_equal(i, j):
        raise ValueError("need two distinct lattice points")
    centers = _cell_center_grids(noise)
    d2i = sum((c - a) ** 2 for c, a in zip(centers, i))
    d2j = sum((c - a) ** 2 for c, a in zip(centers, j))
    return d2j < d2i


def resample_halfspace(noise: WhiteNoiseGrid, i, j, stream: RngStream):
    """Fresh noise on the half-space closer to j; returns (noise, mask).

    Draws a full grid of fresh values and splices by mask, so the stream
    advances identically regardless of the mask's size.
    """
    mask = halfspace_cell_mask(noise, i, j)
    std = noise.spacing ** (noise.dim / 2.0)
    fresh = stream.generator().standard_normal(noise.shape) * std
    values = np.where(mask, fresh, noise.values)
    return WhiteNoiseGrid(noise.spacing, noise.origin, values), mask


def box_cell_mask(noise: WhiteNoiseGrid, box: Box) -> np.ndarray:
    """Cells whose centers lie in the half-open box [lo, hi)."""
    if box.dim != noise.dim:
        raise GeometryError("box dimension mismatch")
    centers = _cell_center_grids(noise)
    mask = np.ones(noise.shape, dtype=bool)
    for ax in range(noise.dim):
        mask &= (centers[ax] >= box.lo[ax]) & (centers[ax] < box.hi[ax])
    return mask


def resample_box(noise: WhiteNoiseGrid, box: Box, stream: RngStream,
                 preserve_sum: bool = False):
    """Fresh noise on the cells inside ``box``; returns (noise, mask).

    With ``preserve_sum`` the fresh cells are shifted by an equal share of
    the sum deficit, i.e. resampled conditionally on the box aggregate
    keeping its original value.
    """
    mask = box_cell_mask(noise, box)
    std = noise.spacing ** (noise.dim / 2.0)
    fresh = stream.generator().standard_normal(noise.shape) * std
    n_cells = int(np.count_nonzero(mask))
    if preserve_sum and n_cells:
        deficit = noise.values[mask].sum() - fresh[mask].sum()
        fresh = fresh + deficit / n_cells
    values = np.where(mask, fresh, noise.values)
    return WhiteNoiseGrid(noise.spacing, noise.origin, values), mask


def delta_field(spec: KernelSpec, noise: WhiteNoiseGrid,
                resampled: WhiteNoiseGrid, window: Box,
                region: str = "", method: str = "fft") -> DeltaField:
    """Field difference from coupled noises, via one convolution.

    Exact by linearity: F(W') - F(W) = conv(W' - W, stencil). With
    ``method="direct"`` vertices outside the influence zone of the refreshed
    cells come out exactly 0.0, not FFT roundoff.
    """
    if noise.shape != resampled.shape or noise.spacing != resampled.spacing:
        raise GeometryError("coupled noises must share geometry")
    _check_noise_geometry(spec, noise, window)
    diff = resampled.values - noise.values
    s = gaussian_stencil(spec, noise.spacing)
    if method == "fft":
        out = fftconvolve(diff, s, mode="valid")
    elif method == "direct":
        out = convolve(diff, s, mode="valid", method="direct")
    else:
        raise ValueError(f"method must be 'fft' or 'direct', got {method!r}")
    return DeltaField(window=window, spacing=noise.spacing, values=out,
                      region=region, meta={"family": spec.family})


# ---------------------------------------------------------------------------
# model bundle


@dataclass(frozen=True, eq=False)
class ModelConfig:
    """One sampling recipe: model, kernel, window and grid spacing."""

    model: str  # "gaussian" | "shot"
    kernel: KernelSpec
    window: Box
    spacing: float
    intensity: float | None = None
    marks: MarkDistribution | None = None

    def __post_init__(self):
        if self.model == "gaussian":
            if self.kernel.normalization != "L2":
                raise KernelError("gaussian model requires an L2 kernel")
        elif self.model == "shot":
            if self.kernel.normalization != "L1":
                raise KernelError("shot model requires an L1 kernel")
            if self.intensity is None or self.intensity <= 0:
                raise ValueError("shot model requires a positive intensity")
            if self.marks is None:
                raise ValueError("shot model requires a mark distribution")
        else:
            raise ValueError(f"model must be 'gaussian' or 'shot', got {self.model!r}")
        # fail fast on bad grids
        vertex_shape(self.window, self.spacing)

    def sample(self, stream: RngStream) -> GridField:
        if self.model == "gaussian":
            return sample_gaussian_field(self.kernel, self.window, self.spacing, stream)
        return sample_shot_noise_field(self.kernel, self.window, self.spacing,
                                       self.intensity, self.marks, stream)

    def sample_with_noise(self, stream: RngStream):
        """Gaussian only: (field, noise) with the noise exposed for coupling."""
        if self.model != "gaussian":
            raise ValueError("sample_with_noise applies to the gaussian model only")
        noise = white_noise_for(self.kernel, self.window, self.spacing, stream)
        return synthesize_gaussian(self.kernel, noise, self.window), noise


def refinement_pair(spec: KernelSpec, window: Box, spacing: float,
                    stream: RngStream, method: str = "fft"):
    """Coupled fields at spacing h and h/2 driven by the same white noise.

    Draws the fine grid once; coarse noise cells are the exact block sums of
    their 2^d fine children, so both fields see the same underlying measure.
    Returns (coarse_field, fine_field).
    """
    if spec.normalization != "L2":
        raise KernelError("refinement_pair requires an L2 kernel")
    fine_h = spacing / 2.0
    p_c = stencil_pad(spec, spacing)
    p_f = stencil_pad(spec, fine_h)
    d = window.dim
    counts = [snap_count(hi - lo, spacing) for lo, hi in zip(window.lo, window.hi)]
    full_shape = tuple(2 * (k + 2 * p_c) for k in counts)
    origin = tuple(lo - p_c * spacing for lo in window.lo)
    fine_full = sample_white_noise(full_shape, fine_h, stream, origin=origin)

    pair_shape = []
    for m in full_shape:
        pair_shape.extend([m // 2, 2])
    blocks = fine_full.values.reshape(pair_shape)
    coarse_vals = blocks.sum(axis=tuple(range(1, 2 * d, 2)))
    coarse = WhiteNoiseGrid(spacing, origin, coarse_vals)

    margin = 2 * p_c - p_f  # >= 0: ceil(2x) <= 2*ceil(x)
    sl = tuple(slice(margin, m - margin) for m in full_shape)
    fine = WhiteNoiseGrid(
        fine_h,
        tuple(o + margin * fine_h for o in origin),
        np.ascontiguousarray(fine_full.values[sl]),
    )
    return (synthesize_gaussian(spec, coarse, window, method=method),
            synthesize_gaussian(spec, fine, window, method=method))
