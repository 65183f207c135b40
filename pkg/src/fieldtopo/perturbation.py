"""Resampling experiments: how far does a noise perturbation reach?

The Gaussian field is a finite-range functional of its driving white noise.
Refresh the noise on the half-space nearer to a far lattice point j and the
local topology around i should not move once the bisector clears the local
components plus the kernel support. These experiments measure that directly:

* the local functional beta_[i](I): the number of components whose reference
  vertex lies in the unit cube at i, differenced across the endpoints of the
  level interval I;
* the probability that a half-space refresh changes beta_[i](I), as a
  function of the lattice distance;
* the per-replicate stabilization radius (smallest tested radius beyond
  which no farther refresh changes the functional);
* the conditional-variance construction: outer draws of the box aggregate
  Z0, inner draws estimating G(Z0) = E(change | Z0), whose variance is the
  positivity proxy for the limiting CLT variance;
* the variance profile of the coupled field difference against its closed
  form 2 * int_B q(x - y)^2 dy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cubical import component_records
from .errors import GeometryError
from .fields import (
    ModelConfig,
    delta_field,
    resample_box,
    resample_halfspace,
    synthesize_gaussian,
    white_noise_for,
)
from .geometry import Box, cube_centered, in_unit_cube, vertex_index_of
from .kernels import evaluate, support_radius
from .quadrature import tensor_simpson
from .rng import RngStream, WhiteNoiseGrid
from .stats import fit_slope, jackknife_se, wilson_interval


def lattice_distance_weight(i, j) -> float:
    """The distance variable attached to records: 1 + |i - j| / 3."""
    return 1.0 + float(np.linalg.norm(np.asarray(j, float) - np.asarray(i, float))) / 3.0


@dataclass(frozen=True)
class ResampleRecord:
    """One coupled draw: local functional before/after a half-space refresh.

    ``dist`` stores the weight 1 + |i - j|/3; the raw lattice offset is
    recoverable from the i and j fields.
    """

    rep: int
    i: tuple
    j: tuple
    dist: float
    u_minus: float
    u_plus: float
    before: int
    after: int

    @property
    def changed(self) -> bool:
        return self.before != self.after

    def to_row(self):
        return (
            self.rep,
            ";".join(str(c) for c in self.i),
            ";".join(str(c) for c in self.j),
            self.dist,
            self.u_minus,
            self.u_plus,
            self.before,
            self.after,
            int(self.changed),
        )


@dataclass(frozen=True)
class ChangeEstimate:
    """Wilson-intervalled change frequency at one lattice offset."""

    i: tuple
    j: tuple
    lattice_dist: float
    n: int
    n_changed: int
    frequency: float
    wilson_lo: float
    wilson_hi: float


@dataclass(frozen=True)
class StabilizationSample:
    """Per-replicate stabilization radius.

    ``radius`` is the smallest tested radius such that every tested refresh
    at a strictly larger radius left the local functional unchanged; when the
    largest tested radius still produced a change the sample is censored and
    carries that largest radius.
    """

    rep: int
    radius: float
    censored: bool


def local_functional(field_values, window: Box, spacing: float, i,
                     u_minus: float, u_plus: float) -> int:
    """beta_[i](I): components attributed to Q_i, differenced over I.

    A component of {F >= u} is attributed to the unit cube at lattice point
    i when its reference vertex (the component's maximum, i.e. its birth
    vertex in the persistence pairing) lies in that cube, half-open on each
    axis. Returns N_i(u_minus) - N_i(u_plus).
    """
    if u_minus > u_plus:
        raise ValueError("need u_minus <= u_plus")
    i_arr = np.asarray(i, float)

    def count(u: float) -> int:
        recs = component_records(field_values, u)
        if not recs:
            return 0
        pts = np.array([
            [window.lo[ax] + spacing * r.reference_vertex[ax]
             for ax in range(window.dim)]
            for r in recs
        ])
        return int(np.count_nonzero(in_unit_cube(pts, i_arr)))

    return count(u_minus) - count(u_plus)


def _check_gaussian(model: ModelConfig):
    if model.model != "gaussian":
        raise ValueError("resampling experiments require the gaussian model")


def _window_center(model: ModelConfig) -> tuple:
    return tuple(round((l + h) / 2.0) for l, h in zip(model.window.lo, model.window.hi))


def _coupled_records(model: ModelConfig, i_pt, offsets, interval, replicates,
                     stream: RngStream):
    """Shared-base coupled draws: one noise per replicate, one refresh per j.

    offsets: list of lattice points j. Returns records grouped per offset.
    """
    u_minus, u_plus = float(interval[0]), float(interval[1])
    per_offset = [[] for _ in offsets]
    for rep in range(replicates):
        rep_stream = stream.child(rep)
        noise = white_noise_for(model.kernel, model.window, model.spacing,
                                rep_stream.child(0))
        base = synthesize_gaussian(model.kernel, noise, model.window)
        before = local_functional(base.values, model.window, model.spacing,
                                  i_pt, u_minus, u_plus)
        for ji, j_pt in enumerate(offsets):
            res, _ = resample_halfspace(noise, i_pt, j_pt,
                                        rep_stream.child(1 + ji))
            bumped = synthesize_gaussian(model.kernel, res, model.window)
            after = local_functional(bumped.values, model.window, model.spacing,
                                     i_pt, u_minus, u_plus)
            per_offset[ji].append(ResampleRecord(
                rep=rep, i=tuple(i_pt), j=tuple(j_pt),
                dist=lattice_distance_weight(i_pt, j_pt),
                u_minus=u_minus, u_plus=u_plus, before=before, after=after,
            ))
    return per_offset


def _estimate(records) -> ChangeEstimate:
    n_changed = sum(r.changed for r in records)
    lo, hi = wilson_interval(n_changed, len(records))
    r0 = records[0]
    lat = float(np.linalg.norm(np.asarray(r0.j, float) - np.asarray(r0.i, float)))
    return ChangeEstimate(i=r0.i, j=r0.j, lattice_dist=lat, n=len(records),
                          n_changed=n_changed, frequency=n_changed / len(records),
                          wilson_lo=lo, wilson_hi=hi)


def topology_change_probability(model: ModelConfig, i, j, interval,
                                replicates: int, stream: RngStream):
    """P(local functional changes under the H_{i,j} refresh), with records."""
    _check_gaussian(model)
    if tuple(i) == tuple(j):
        raise ValueError("need two distinct lattice points")
    if replicates <= 0:
        raise ValueError("need replicates > 0")
    per = _coupled_records(model, tuple(i), [tuple(j)], interval, replicates, stream)
    return _estimate(per[0]), per[0]


def change_probability_curve(model: ModelConfig, distances, interval,
                             replicates: int, stream: RngStream,
                             axis: int = 0, center=None):
    """Change probability at j = center + k * e_axis for each distance k.

    All distances share each replicate's base noise, so the curve is a
    coupled comparison. Returns (estimates, records).
    """
    _check_gaussian(model)
    if not 0 <= axis < model.window.dim:
        raise GeometryError(f"axis {axis} out of range")
    dists = [int(k) for k in distances]
    if any(k <= 0 for k in dists):
        raise ValueError("distances must be positive")
    i_pt = tuple(int(c) for c in (center if center is not None
                                  else _window_center(model)))
    offsets = [tuple(c + (k if ax == axis else 0) for ax, c in enumerate(i_pt))
               for k in dists]
    per = _coupled_records(model, i_pt, offsets, interval, replicates, stream)
    estimates = [_estimate(records) for records in per]
    all_records = [r for records in per for r in records]
    return estimates, all_records


def stabilization_radius(model: ModelConfig, radii, interval, replicates: int,
                         stream: RngStream, axis: int = 0, center=None):
    """Per-replicate smallest radius past which refreshes stop acting.

    Tests j = center + r * e_axis for each radius r. Returns
    (samples, records).
    """
    _check_gaussian(model)
    rr = [int(r) for r in radii]
    if any(b <= a for a, b in zip(rr, rr[1:])) or not rr:
        raise ValueError("radii must be strictly increasing and nonempty")
    if any(r <= 0 for r in rr):
        raise ValueError("radii must be positive")
    i_pt = tuple(int(c) for c in (center if center is not None
                                  else _window_center(model)))
    offsets = [tuple(c + (r if ax == axis else 0) for ax, c in enumerate(i_pt))
               for r in rr]
    per = _coupled_records(model, i_pt, offsets, interval, replicates, stream)

    samples = []
    for rep in range(replicates):
        flags = [per[k][rep].changed for k in range(len(rr))]
        changed_idx = [k for k, f in enumerate(flags) if f]
        if not changed_idx:
            samples.append(StabilizationSample(rep=rep, radius=float(rr[0]),
                                               censored=False))
        elif changed_idx[-1] == len(rr) - 1:
            samples.append(StabilizationSample(rep=rep, radius=float(rr[-1]),
                                               censored=True))
        else:
            samples.append(StabilizationSample(
                rep=rep, radius=float(rr[changed_idx[-1] + 1]), censored=False))
    records = [r for records in per for r in records]
    return samples, records


def stabilization_tail(samples, radii) -> np.ndarray:
    """Empirical P(R > r) per tested radius (censored samples count as >)."""
    rr = np.asarray(radii, float)
    out = np.empty(rr.size)
    n = len(samples)
    for k, r in enumerate(rr):
        out[k] = sum(1 for s in samples
                     if s.radius > r or (s.censored and s.radius >= r)) / n
    return out


def structural_zero_distance(model: ModelConfig, max_component_diameter: float,
                             center=None) -> float:
    """Lattice distance past which a refresh provably cannot change beta_[i].

    The refresh only moves vertex values within support radius + one cell of
    the bisector at distance k/2 from i. A change of the attributed count
    needs a component bridging that influence zone and the unit cube at i,
    and every piece of such a component outside the zone sits inside an
    unperturbed component, so its diameter is bounded by the base field's
    largest component diameter. Three cell-widths of slack absorb the
    zone-to-component adjacency margins.
    """
    r = support_radius(model.kernel)
    d = model.window.dim
    slack = 0.5 * math.sqrt(d) + 3.0 * model.spacing
    return 2.0 * (max_component_diameter + r + slack)


# ---------------------------------------------------------------------------
# conditional variance construction


@dataclass(frozen=True)
class SigmaConditional:
    """Nested Monte-Carlo estimate of Var(G(Z0)) with its shift curve."""

    box_side: int
    replicates: int
    inner_replicates: int
    u_minus: float
    u_plus: float
    z_values: np.ndarray  # outer draws of Z0
    g_hat: np.ndarray  # inner-mean estimate of G at each z
    inner_var: np.ndarray  # inner sample variance per outer draw
    shifts: np.ndarray
    shift_curve: np.ndarray  # mean over outer draws of G(Z0 + s)
    sigma2: float  # Var of g_hat across outer draws
    sigma2_se: float  # jackknife standard error
    sigma2_debiased: float  # inner-noise corrected variance

    @property
    def g_mean(self) -> float:
        return float(self.g_hat.mean())

    @property
    def g_mean_se(self) -> float:
        return float(self.g_hat.std(ddof=1) / math.sqrt(self.g_hat.size))


def sigma_conditional(model: ModelConfig, box_side: int, replicates: int,
                      inner_replicates: int, interval, stream: RngStream,
                      shifts=(0.0,)) -> SigmaConditional:
    """Variance lower-bound proxy via conditioning on the box aggregate.

    Outer loop draws Z0 ~ N(0, m^d), the white-noise integral over the side-m
    box at the window center. Inner loop draws the remaining noise given Z0,
    applies an independent box refresh, and records the change of the
    interval-differenced interior component count. G(Z0) is the inner mean;
    Var over outer draws of the inner means is ``sigma2`` (reported raw, with
    an inner-noise-corrected value alongside).
    """
    _check_gaussian(model)
    if box_side < 1:
        raise ValueError("box side must be >= 1")
    if inner_replicates < 2:
        raise ValueError("need inner replicates >= 2")
    if replicates < 2:
        raise ValueError("need replicates >= 2")
    u_minus, u_plus = float(interval[0]), float(interval[1])
    if u_minus > u_plus:
        raise ValueError("need u_minus <= u_plus")
    d = model.window.dim
    center = _window_center(model)
    box = cube_centered(center, float(box_side))
    shifts = np.asarray(shifts, float)
    if 0.0 not in shifts:
        raise ValueError("shifts must include 0.0 (the unshifted G estimate)")

    z_std = float(box_side) ** (d / 2.0)
    z_values = np.empty(replicates)
    g_hat = np.empty(replicates)
    inner_var = np.empty(replicates)
    curve_acc = np.zeros(shifts.size)

    from .cubical import persistent_betti_components

    def functional(values) -> int:
        # interior components: interval difference
        return (persistent_betti_components(values, u_minus, u_minus, interior=True)
                - persistent_betti_components(values, u_plus, u_plus, interior=True))

    for rep in range(replicates):
        rep_stream = stream.child(rep)
        z = float(rep_stream.child(0).generator().standard_normal()) * z_std
        z_values[rep] = z
        for si, s in enumerate(shifts):
            target = z + float(s) * z_std
            deltas = np.empty(inner_replicates)
            for inner in range(inner_replicates):
                inner_stream = rep_stream.child(1 + si, inner)
                noise = white_noise_for(model.kernel, model.window,
                                        model.spacing, inner_stream.child(0))
                mask = _box_mask_checked(noise, box)
                cond = _condition_on_sum(noise, mask, target)
                base = synthesize_gaussian(model.kernel, cond, model.window)
                refreshed, _ = resample_box(cond, box, inner_stream.child(1))
                bumped = synthesize_gaussian(model.kernel, refreshed, model.window)
                deltas[inner] = functional(bumped.values) - functional(base.values)
            if s == 0.0:
                g_hat[rep] = deltas.mean()
                inner_var[rep] = deltas.var(ddof=1)
            curve_acc[si] += deltas.mean()

    sigma2 = float(g_hat.var(ddof=1))
    se = jackknife_se(g_hat, lambda x: x.var(ddof=1))
    debiased = float(sigma2 - inner_var.mean() / inner_replicates)
    return SigmaConditional(
        box_side=box_side, replicates=replicates,
        inner_replicates=inner_replicates,
        u_minus=u_minus, u_plus=u_plus,
        z_values=z_values, g_hat=g_hat, inner_var=inner_var,
        shifts=shifts, shift_curve=curve_acc / replicates,
        sigma2=sigma2, sigma2_se=se, sigma2_debiased=debiased,
    )


def _box_mask_checked(noise: WhiteNoiseGrid, box: Box) -> np.ndarray:
    from .fields import box_cell_mask

    mask = box_cell_mask(noise, box)
    if not mask.any():
        raise GeometryError("conditioning box covers no noise cells")
    return mask


def _condition_on_sum(noise: WhiteNoiseGrid, mask: np.ndarray,
                      target: float) -> WhiteNoiseGrid:
    """Shift masked cells by an equal share so their sum equals ``target``."""
    n = int(np.count_nonzero(mask))
    deficit = target - noise.values[mask].sum()
    values = np.where(mask, noise.values + deficit / n, noise.values)
    return WhiteNoiseGrid(noise.spacing, noise.origin, values)


# ---------------------------------------------------------------------------
# variance profile of the coupled difference


@dataclass(frozen=True)
class DeltaVarianceProfile:
    probes: np.ndarray  # (n, d) probe points
    dist: np.ndarray  # distance from probe to the resampled region
    empirical: np.ndarray
    theory: np.ndarray
    reps: int

    def tail_slope(self) -> float:
        """Fitted slope of log Var vs log(1 + dist) over positive entries."""
        keep = (self.dist > 0) & (self.empirical > 0)
        if np.count_nonzero(keep) < 2:
            raise ValueError("not enough positive-distance probes for a fit")
        slope, _ = fit_slope(np.log1p(self.dist[keep]),
                             np.log(self.empirical[keep]))
        return slope


def _halfspace_geometry(i, j):
    i = np.asarray(i, float)
    j = np.asarray(j, float)
    diff = j - i
    norm = float(np.linalg.norm(diff))
    if norm == 0:
        raise ValueError("need two distinct lattice points")
    return diff / norm, (i + j) / 2.0


def _refined_overlap(f, lo, hi, tol: float) -> float:
    # tensor_simpson's tolerance is absolute: a far-tail overlap integral can
    # be orders of magnitude below 1, so rerun with the threshold scaled to a
    # first-pass estimate to keep the result relatively accurate
    val = tensor_simpson(f, lo, hi, tol=tol)
    if 0.0 < val < 1.0:
        val = tensor_simpson(f, lo, hi, tol=tol * val)
    return val


def halfspace_overlap_variance(spec, i, j, probe, tol: float = 1e-6,
                               grid: int = 160) -> float:
    """2 * int over {z . n < s} of q(z)^2 dz, s the signed bisector distance.

    Axis-aligned pairs clip the support box exactly; oblique pairs use a
    midpoint rule with the half-space indicator.
    """
    n_hat, mid = _halfspace_geometry(i, j)
    x = np.asarray(probe, float)
    s = float((x - mid) @ n_hat)
    r = support_radius(spec)
    if s <= -r:
        return 0.0
    d = spec.dim
    if np.count_nonzero(np.abs(n_hat) > 1e-12) == 1:
        ax = int(np.argmax(np.abs(n_hat)))
        lo = [-r] * d
        hi = [r] * d
        if n_hat[ax] > 0:
            hi[ax] = min(r, s)
        else:
            lo[ax] = max(-r, -s)
        val = _refined_overlap(lambda pts: evaluate(spec, pts) ** 2, lo, hi, tol)
        return 2.0 * val
    axes = [np.linspace(-r, r, grid, endpoint=False) + r / grid for _ in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    inside = pts @ n_hat < s
    q2 = evaluate(spec, pts[inside]) ** 2
    return 2.0 * float(q2.sum() * (2.0 * r / grid) ** d)


def box_overlap_variance(spec, box: Box, probe, tol: float = 1e-6) -> float:
    """2 * int over the box of q(probe - y)^2 dy, clipped to the support."""
    x = np.asarray(probe, float)
    r = support_radius(spec)
    lo = [max(bl, xc - r) for bl, xc in zip(box.lo, x)]
    hi = [min(bh, xc + r) for bh, xc in zip(box.hi, x)]
    if any(l >= h for l, h in zip(lo, hi)):
        return 0.0
    val = _refined_overlap(lambda pts: evaluate(spec, x[None, :] - pts) ** 2,
                           lo, hi, tol)
    return 2.0 * val


def _region_distance(region, probes: np.ndarray) -> np.ndarray:
    kind = region[0]
    if kind == "halfspace":
        _, i, j = region
        n_hat, mid = _halfspace_geometry(i, j)
        s = (probes - mid) @ n_hat
        return np.maximum(0.0, -s)
    if kind == "box":
        box = region[1]
        lo = np.asarray(box.lo)
        hi = np.asarray(box.hi)
        gap = np.maximum(lo - probes, 0.0) + np.maximum(probes - hi, 0.0)
        return np.sqrt((gap**2).sum(axis=1))
    raise ValueError(f"unknown region kind {kind!r}")


def delta_variance_profile(model: ModelConfig, region, probes, reps: int,
                           stream: RngStream, tol: float = 1e-6,
                           method: str = "fft") -> DeltaVarianceProfile:
    """Empirical vs closed-form Var of the coupled difference at probes.

    ``region`` is ("halfspace", i, j) or ("box", Box). Distances reported are
    from each probe to the resampled region (0 inside it). Use
    ``method="direct"`` when probes beyond a compact kernel's support must
    come out exactly zero.
    """
    _check_gaussian(model)
    if reps < 2:
        raise ValueError("need reps >= 2")
    probes = np.atleast_2d(np.asarray(probes, float))
    idx = [vertex_index_of(model.window, model.spacing, p) for p in probes]
    kind = region[0]

    samples = np.empty((reps, probes.shape[0]))
    for rep in range(reps):
        rep_stream = stream.child(rep)
        noise = white_noise_for(model.kernel, model.window, model.spacing,
                                rep_stream.child(0))
        if kind == "halfspace":
            res, _ = resample_halfspace(noise, region[1], region[2],
                                        rep_stream.child(1))
            label = f"halfspace {region[1]}->{region[2]}"
        elif kind == "box":
            res, _ = resample_box(noise, region[1], rep_stream.child(1))
            label = f"box {region[1].lo}..{region[1].hi}"
        else:
            raise ValueError(f"unknown region kind {kind!r}")
        delta = delta_field(model.kernel, noise, res, model.window,
                            region=label, method=method)
        for c, ix in enumerate(idx):
            samples[rep, c] = delta.values[ix]

    if kind == "halfspace":
        theory = np.array([
            halfspace_overlap_variance(model.kernel, region[1], region[2], p,
                                       tol=tol)
            for p in probes
        ])
    else:
        theory = np.array([
            box_overlap_variance(model.kernel, region[1], p, tol=tol)
            for p in probes
        ])
    return DeltaVarianceProfile(
        probes=probes,
        dist=_region_distance(region, probes),
        empirical=samples.var(axis=0, ddof=1),
        theory=theory,
        reps=reps,
    )
