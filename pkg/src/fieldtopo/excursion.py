"""Excursion-set geometry that rides on the synthesis pipeline.

Critical points of a smooth Gaussian field are located by a cell test on the
convolved derivative fields: a grid cell is flagged when every partial
derivative takes both signs among the cell's corner vertices, in the spirit
of an interval-Newton existence check. Component diameter tails are measured
by flood-filling the component of a fixed start vertex.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cubical import component_containing
from .errors import KernelError
from .fields import GridField, ModelConfig, synthesize_gradient, white_noise_for
from .geometry import Box
from .kernels import KernelSpec
from .rng import RngStream, WhiteNoiseGrid
from .stats import wilson_interval


@dataclass(frozen=True)
class CriticalPoint:
    """A flagged cell: base corner index, its field value, cell center."""

    base_vertex: tuple
    value: float
    center: tuple


def critical_cells(field: np.ndarray, derivatives, band=None) -> list:
    """Cells where every derivative field changes sign among the corners.

    ``derivatives`` is one array per axis, same shape as ``field``. A cell is
    flagged when, for every axis, the corner values of that derivative are
    not all of one strict sign. With ``band=(lo, hi)``, only cells whose base
    corner value lies in [lo, hi) are kept.
    """
    arr = np.asarray(field, dtype=np.float64)
    d = arr.ndim
    if len(derivatives) != d:
        raise ValueError(f"need {d} derivative fields, got {len(derivatives)}")
    core = tuple(slice(0, m - 1) for m in arr.shape)
    cell_shape = tuple(m - 1 for m in arr.shape)
    flag = np.ones(cell_shape, dtype=bool)
    for der in derivatives:
        der = np.asarray(der, dtype=np.float64)
        if der.shape != arr.shape:
            raise ValueError("derivative grid shape mismatch")
        cmin = np.full(cell_shape, np.inf)
        cmax = np.full(cell_shape, -np.inf)
        for corner in np.ndindex(*(2,) * d):
            sl = tuple(slice(c, c + m - 1) for c, m in zip(corner, arr.shape))
            vals = der[sl]
            np.minimum(cmin, vals, out=cmin)
            np.maximum(cmax, vals, out=cmax)
        # the corner interval must contain zero on every axis
        flag &= (cmin <= 0.0) & (cmax >= 0.0)
    base_vals = arr[core]
    if band is not None:
        lo, hi = float(band[0]), float(band[1])
        flag &= (base_vals >= lo) & (base_vals < hi)
    out = []
    for idx in np.argwhere(flag):
        t = tuple(int(c) for c in idx)
        out.append(CriticalPoint(
            base_vertex=t,
            value=float(arr[t]),
            center=tuple(c + 0.5 for c in t),
        ))
    return out


def locate_critical_points(spec: KernelSpec, noise: WhiteNoiseGrid, window: Box,
                           band, method: str = "fft") -> list:
    """Critical points of the Gaussian field with value in the band.

    Synthesizes the field and its d partial-derivative fields from the same
    noise, then applies :func:`critical_cells`. Requires a differentiable
    kernel; the uniform family raises a kernel error, and shot-noise models
    are unsupported because their kernels need not be differentiable.
    """
    from .fields import synthesize_gaussian

    if spec.family == "uniform":
        raise KernelError("critical-point location needs a differentiable kernel")
    field = synthesize_gaussian(spec, noise, window, method=method)
    derivs = [
        synthesize_gradient(spec, noise, window, axis=ax, method=method).values
        for ax in range(spec.dim)
    ]
    return critical_cells(field.values, derivs, band=band)


def critical_point_count(model: ModelConfig, band, replicates: int,
                         stream: RngStream, method: str = "fft") -> np.ndarray:
    """Per-replicate counts of flagged cells with value in the band."""
    if model.model != "gaussian":
        raise ValueError("critical-point location is unsupported for shot-noise models")
    counts = np.empty(replicates, dtype=np.int64)
    for rep in range(replicates):
        noise = white_noise_for(model.kernel, model.window, model.spacing,
                                stream.child(rep))
        counts[rep] = len(locate_critical_points(model.kernel, noise,
                                                 model.window, band, method=method))
    return counts


@dataclass(frozen=True)
class TailCurve:
    """P(component diameter >= r) with Wilson intervals, per radius."""

    level: float
    radii: np.ndarray
    probs: np.ndarray
    wilson_lo: np.ndarray
    wilson_hi: np.ndarray
    n: int
    n_occupied: int  # replicates where the start vertex cleared the level

    def loglog_slope(self) -> float:
        from .stats import fit_loglog_slope

        return fit_loglog_slope(self.radii, self.probs)


def diameter_tail(model: ModelConfig, u: float, radii, replicates: int,
                  stream: RngStream, start=None) -> TailCurve:
    """Tail of the diameter of the component containing the start vertex.

    The diameter is the largest physical side of the component's bounding
    box. Replicates where the start vertex is below the level contribute
    diameter 0. The curve is non-increasing by construction.
    """
    rr = np.asarray(sorted(float(r) for r in radii))
    if rr.size == 0 or rr[0] <= 0:
        raise ValueError("radii must be positive")
    shape = None
    hits = np.zeros(rr.size, dtype=np.int64)
    occupied = 0
    for rep in range(replicates):
        field = model.sample(stream.child(rep))
        if shape is None:
            shape = field.shape
            start_idx = (tuple(int(m // 2) for m in shape)
                         if start is None else tuple(int(c) for c in start))
        rec = component_containing(field.values, u, start_idx)
        if rec is None:
            continue
        occupied += 1
        diam = rec.diameter(model.spacing)
        hits += (rr <= diam).astype(np.int64)
    probs = hits / float(replicates)
    lo = np.empty(rr.size)
    hi = np.empty(rr.size)
    for k in range(rr.size):
        lo[k], hi[k] = wilson_interval(int(hits[k]), replicates)
    return TailCurve(level=float(u), radii=rr, probs=probs,
                     wilson_lo=lo, wilson_hi=hi, n=replicates,
                     n_occupied=occupied)
