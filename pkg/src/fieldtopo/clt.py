"""Ensemble statistics for component counts across a window ladder.

An ensemble draws many independent fields per window size, samples the
degree-q Betti path of each on a fixed level grid, and keeps the raw integer
curves. Every downstream statistic (cumulants, normality diagnostics,
variance scaling, multilevel covariance, moment ratios for tightness) is
recomputed from those raw curves, which makes merging ensembles exactly
order-independent: merge = concatenate + sort by replicate id.

Normalization convention: the centered, volume-normalized count is
(count - mean) / sqrt(volume), with volume the window Lebesgue volume, so
its variance matches the variance/volume scaling ratios.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .cubical import betti_curve, betti_jump_levels
from .errors import ResourceError
from .excursion import critical_cells
from .fields import ModelConfig, stencil_pad, synthesize_gaussian, \
    synthesize_gradient, white_noise_for
from .geometry import Box, snap_count
from .io import canonical_digest
from .kernels import KernelSpec, spectral_moments
from .rng import MarkDistribution, make_stream
from .stats import jackknife_se, k_statistics

PARTS = ("count", "pos", "neg", "icount", "ipos", "ineg")

def default_mem_limit() -> int:
    """Byte budget for the largest replicate, from FIELDTOPO_MEM_LIMIT."""
    return int(float(os.environ.get("FIELDTOPO_MEM_LIMIT", 12e9)))


def _kernel_descriptor(spec: KernelSpec) -> dict:
    return {
        "family": spec.family,
        "dim": spec.dim,
        "b0": spec.b0,
        "eta": spec.eta,
        "normalization": spec.normalization,
    }


def _model_for(kind: str, kernel: KernelSpec, n: float, spacing: float,
               intensity, marks) -> ModelConfig:
    d = kernel.dim
    window = Box((0.0,) * d, (float(n),) * d)
    return ModelConfig(model=kind, kernel=kernel, window=window,
                       spacing=spacing, intensity=intensity, marks=marks)


def estimate_field_bytes(kernel: KernelSpec, n: float, spacing: float) -> int:
    """Rough peak bytes for one replicate at window size n."""
    d = kernel.dim
    k = snap_count(float(n), spacing)
    p = stencil_pad(kernel, spacing)
    noise_cells = (k + 2 * p) ** d
    grid_cells = (k + 1) ** d
    # noise + field + fft scratch + sweep bookkeeping
    return 8 * (2 * noise_cells + 5 * grid_cells)


def _check_memory(kernel: KernelSpec, sizes, spacing: float, mem_limit: int):
    worst = max(estimate_field_bytes(kernel, n, spacing) for n in sizes)
    if worst > mem_limit:
        raise ResourceError(
            f"largest window needs about {worst} bytes, limit {mem_limit}",
            required_bytes=worst,
        )


def _ensemble_worker(payload):
    (kind, kernel, n, spacing, intensity, marks, levels, q, tie,
     seed, size_index, rep) = payload
    model = _model_for(kind, kernel, n, spacing, intensity, marks)
    stream = make_stream(seed).child(size_index, rep)
    fld = model.sample(stream)
    path = betti_curve(fld.values, levels, q=q, tie=tie)
    return (size_index, rep, path.count, path.pos, path.neg,
            path.interior_count, path.interior_pos, path.interior_neg)


@dataclass
class EnsembleSummary:
    """Raw Betti-path matrices per window size, plus derived statistics.

    ``data[n][part]`` is an int64 matrix of shape (replicates, levels) whose
    rows are aligned with ``rep_ids``. Two summaries produced from the same
    master seed with disjoint replicate ranges merge exactly.
    """

    config_hash: str
    kind: str
    kernel: KernelSpec
    spacing: float
    window_sizes: tuple
    levels: np.ndarray
    q: int
    tie: str
    seed: int
    rep_ids: np.ndarray
    data: dict = field(repr=False)

    @property
    def replicates(self) -> int:
        return int(self.rep_ids.size)

    @property
    def variance_defined(self) -> bool:
        return self.replicates >= 2

    def window_volume(self, n) -> float:
        return float(n) ** self.kernel.dim

    def level_index(self, u: float) -> int:
        hits = np.nonzero(np.isclose(self.levels, u, rtol=0, atol=1e-12))[0]
        if hits.size != 1:
            raise ValueError(f"level {u} is not on the ensemble grid")
        return int(hits[0])

    def matrix(self, n, part: str = "icount") -> np.ndarray:
        if part not in PARTS:
            raise ValueError(f"part must be one of {PARTS}")
        return self.data[float(n)][part]

    def samples(self, n, u: float, interior: bool = True) -> np.ndarray:
        part = "icount" if interior else "count"
        return self.matrix(n, part)[:, self.level_index(u)].astype(np.float64)

    def normalized(self, n, interior: bool = True) -> np.ndarray:
        """(count - mean) / sqrt(volume), per level column."""
        x = self.matrix(n, "icount" if interior else "count").astype(np.float64)
        return (x - x.mean(axis=0)) / math.sqrt(self.window_volume(n))

    def moment_table(self, n, interior: bool = True) -> list:
        """Per-level k-statistics rows: (u, mean, k2, k3, k4, skew, excess)."""
        x = self.matrix(n, "icount" if interior else "count").astype(np.float64)
        rows = []
        for col, u in enumerate(self.levels):
            ks = k_statistics(x[:, col])
            rows.append((float(u), ks["k1"], ks["k2"], ks["k3"], ks["k4"],
                         ks["skewness"], ks["excess"]))
        return rows

    def sigma_hat(self, n, level_indices=None, interior: bool = True) -> np.ndarray:
        """Sample covariance of the normalized count vector across levels."""
        if not self.variance_defined:
            raise ValueError("covariance undefined for a single replicate")
        z = self.normalized(n, interior=interior)
        if level_indices is not None:
            z = z[:, np.asarray(level_indices, dtype=int)]
        return np.atleast_2d(np.cov(z, rowvar=False, ddof=1))

    def merge(self, other: "EnsembleSummary") -> "EnsembleSummary":
        if self.config_hash != other.config_hash:
            raise ValueError("cannot merge ensembles with different configurations")
        if np.intersect1d(self.rep_ids, other.rep_ids).size:
            raise ValueError("cannot merge overlapping replicate ids")
        ids = np.concatenate([self.rep_ids, other.rep_ids])
        order = np.argsort(ids, kind="stable")
        data = {}
        for n in self.data:
            data[n] = {
                part: np.concatenate([self.data[n][part], other.data[n][part]])[order]
                for part in PARTS
            }
        return EnsembleSummary(
            config_hash=self.config_hash, kind=self.kind, kernel=self.kernel,
            spacing=self.spacing, window_sizes=self.window_sizes,
            levels=self.levels, q=self.q, tie=self.tie, seed=self.seed,
            rep_ids=ids[order], data=data,
        )


def ensemble_config_hash(kind: str, kernel: KernelSpec, spacing: float,
                         window_sizes, levels, q: int, tie: str, seed: int,
                         intensity=None) -> str:
    # replicate counts are deliberately excluded so partial runs can merge
    return canonical_digest({
        "kind": kind,
        "kernel": _kernel_descriptor(kernel),
        "spacing": spacing,
        "window_sizes": [float(n) for n in window_sizes],
        "levels": [float(u) for u in levels],
        "q": q,
        "tie": tie,
        "seed": seed,
        "intensity": intensity,
    })


def ensemble_run(kind: str, kernel: KernelSpec, spacing: float, window_sizes,
                 levels, replicates: int, seed: int, q: int = 0,
                 tie: str = "asc", intensity=None,
                 marks: MarkDistribution | None = None, threads: int = 1,
                 rep_offset: int = 0,
                 mem_limit: int | None = None) -> EnsembleSummary:
    """Draw the ensemble and collect raw Betti-path matrices.

    Replicate r of window size index s uses the child stream (s, r), so the
    result is independent of ``threads`` and can be split across runs via
    ``rep_offset`` and merged later.
    """
    levels = np.asarray(levels, dtype=np.float64)
    sizes = tuple(float(n) for n in window_sizes)
    if replicates < 1:
        raise ValueError("need at least one replicate")
    if not sizes:
        raise ValueError("need at least one window size")
    if mem_limit is None:
        mem_limit = default_mem_limit()
    _check_memory(kernel, sizes, spacing, mem_limit)
    for n in sizes:  # fail fast on bad geometry before any sampling
        _model_for(kind, kernel, n, spacing, intensity, marks)

    rep_ids = np.arange(rep_offset, rep_offset + replicates, dtype=np.int64)
    data = {
        n: {part: np.empty((replicates, levels.size), dtype=np.int64)
            for part in PARTS}
        for n in sizes
    }
    payloads = [
        (kind, kernel, n, spacing, intensity, marks, levels, q, tie,
         seed, si, int(rep))
        for si, n in enumerate(sizes)
        for rep in rep_ids
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = pool.map(_ensemble_worker, payloads,
                               chunksize=max(1, len(payloads) // (8 * threads)))
            _collect(results, data, sizes, rep_offset)
    else:
        _collect(map(_ensemble_worker, payloads), data, sizes, rep_offset)

    return EnsembleSummary(
        config_hash=ensemble_config_hash(kind, kernel, spacing, sizes, levels,
                                         q, tie, seed, intensity),
        kind=kind, kernel=kernel, spacing=spacing, window_sizes=sizes,
        levels=levels, q=q, tie=tie, seed=seed, rep_ids=rep_ids, data=data,
    )


def _collect(results, data, sizes, rep_offset):
    for size_index, rep, cnt, pos, neg, icnt, ipos, ineg in results:
        row = rep - rep_offset
        bucket = data[sizes[size_index]]
        bucket["count"][row] = cnt
        bucket["pos"][row] = pos
        bucket["neg"][row] = neg
        bucket["icount"][row] = icnt
        bucket["ipos"][row] = ipos
        bucket["ineg"][row] = ineg


# ---------------------------------------------------------------------------
# scalar-sample statistics


def cumulants(samples) -> dict:
    """First four k-statistics (unbiased cumulant estimates) of a sample."""
    return k_statistics(np.asarray(samples, dtype=np.float64))


def central_identity_gap(samples) -> float:
    """|m4 - (3 m2^2 + c4)| with plug-in central moments; zero by algebra."""
    x = np.asarray(samples, dtype=np.float64)
    m = x - x.mean()
    m2 = float((m**2).mean())
    m4 = float((m**4).mean())
    c4 = m4 - 3.0 * m2**2
    return abs(m4 - (3.0 * m2**2 + c4))


@dataclass(frozen=True)
class NormalityReport:
    n: int
    skewness: float
    excess_kurtosis: float
    jarque_bera: float
    pvalue: float
    qq_correlation: float


def normality_test(samples) -> NormalityReport:
    """Jarque-Bera with plug-in moments, plus a normal QQ correlation."""
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    if n < 20:
        raise ValueError("normality test needs at least 20 samples")
    m = x - x.mean()
    m2 = float((m**2).mean())
    if m2 == 0.0:
        raise ValueError("degenerate (constant) sample")
    g1 = float((m**3).mean()) / m2**1.5
    g2 = float((m**4).mean()) / m2**2 - 3.0
    jb = n * (g1**2 / 6.0 + g2**2 / 24.0)
    pvalue = float(sps.chi2.sf(jb, df=2))
    order = np.sort(x)
    theo = sps.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    qq = float(np.corrcoef(order, theo)[0, 1])
    return NormalityReport(n=n, skewness=g1, excess_kurtosis=g2,
                           jarque_bera=jb, pvalue=pvalue, qq_correlation=qq)


def gaussian_rice_rate(spec: KernelSpec, u: float) -> float:
    """Expected interior components per unit length, one dimension.

    For a unit-variance smooth stationary Gaussian field on the line the
    expected number of up-crossings (hence components of {F >= u} per unit
    length) is sqrt(lambda_1) / (2 pi) * exp(-u^2 / 2), lambda_1 the second
    spectral moment.
    """
    if spec.dim != 1:
        raise ValueError("the closed-form rate applies to dimension one")
    lam1 = spectral_moments(spec)[0]
    return math.sqrt(lam1) / (2.0 * math.pi) * math.exp(-u * u / 2.0)


# ---------------------------------------------------------------------------
# ladder statistics


@dataclass(frozen=True)
class MeanDensityRow:
    n: float
    volume: float
    mu_hat: float
    se: float
    ci_lo: float
    ci_hi: float


def mean_density(summary: EnsembleSummary, u: float,
                 interior: bool = True) -> list:
    """Per window size: mean count / volume with a normal 95% interval."""
    rows = []
    for n in summary.window_sizes:
        x = summary.samples(n, u, interior=interior)
        vol = summary.window_volume(n)
        mu = float(x.mean()) / vol
        se = float(x.std(ddof=1)) / math.sqrt(x.size) / vol if x.size > 1 else math.nan
        half = 1.959963984540054 * se
        rows.append(MeanDensityRow(n=n, volume=vol, mu_hat=mu, se=se,
                                   ci_lo=mu - half, ci_hi=mu + half))
    return rows


@dataclass(frozen=True)
class VarianceScalingRow:
    n: float
    volume: float
    ratio: float  # Var(count) / volume
    se: float  # jackknife standard error of the ratio
    ci_lo: float
    ci_hi: float


@dataclass(frozen=True)
class VarianceScaling:
    u: float
    rows: list
    stabilized: bool  # last two ratios within 25% of each other
    last_gap: float  # |ratio[-1]/ratio[-2] - 1|


def variance_scaling(summary: EnsembleSummary, u: float,
                     interior: bool = True) -> VarianceScaling:
    if not summary.variance_defined:
        raise ValueError("variance scaling needs at least two replicates")
    rows = []
    for n in summary.window_sizes:
        x = summary.samples(n, u, interior=interior)
        vol = summary.window_volume(n)
        ratio = float(x.var(ddof=1)) / vol
        se = jackknife_se(x, lambda v: v.var(ddof=1) / vol)
        half = 1.959963984540054 * se
        rows.append(VarianceScalingRow(n=n, volume=vol, ratio=ratio, se=se,
                                       ci_lo=ratio - half, ci_hi=ratio + half))
    if len(rows) >= 2 and rows[-2].ratio > 0:
        gap = abs(rows[-1].ratio / rows[-2].ratio - 1.0)
    else:
        gap = math.inf
    return VarianceScaling(u=float(u), rows=rows,
                           stabilized=bool(gap <= 0.25), last_gap=gap)


def multilevel_covariance(summary: EnsembleSummary, n, levels=None,
                          interior: bool = True) -> np.ndarray:
    """Covariance of the normalized count vector at the chosen levels."""
    idx = None if levels is None else [summary.level_index(u) for u in levels]
    return summary.sigma_hat(n, level_indices=idx, interior=interior)


def mardia_skewness(x: np.ndarray):
    """Mardia's multivariate skewness test: (statistic, dof, pvalue)."""
    x = np.asarray(x, dtype=np.float64)
    r, p = x.shape
    if r <= p:
        raise ValueError("need more samples than dimensions")
    c = x - x.mean(axis=0)
    s = np.cov(c, rowvar=False, ddof=0)
    s_inv = np.linalg.pinv(np.atleast_2d(s))
    m = c @ s_inv @ c.T
    b1 = float((m**3).mean())
    stat = r * b1 / 6.0
    dof = p * (p + 1) * (p + 2) // 6
    return stat, dof, float(sps.chi2.sf(stat, df=dof))


# ---------------------------------------------------------------------------
# tightness diagnostics


@dataclass(frozen=True)
class ChentsovMoment:
    n: float
    volume: float
    u_minus: float
    u_plus: float
    length: float
    n_big: bool  # length >= volume^(-2/3)
    ratio: float  # E[(X - EX)^4] / (volume^2 * length^(5/4))
    m4: float
    variance: float
    c4: float
    identity_gap: float  # |m4 - (3 m2^2 + c4)|, plug-in moments


def chentsov_moment(summary: EnsembleSummary, n, interval,
                    interior: bool = True) -> ChentsovMoment:
    """Fourth-moment ratio of the increasing-part increment over an interval.

    X is the increment of the monotone increasing part of the Betti path
    over [u_minus, u_plus]; the ratio divides its centered fourth moment by
    volume^2 * length^(5/4). The interval endpoints must lie on the grid.
    """
    u_minus, u_plus = float(interval[0]), float(interval[1])
    if not u_minus < u_plus:
        raise ValueError("need u_minus < u_plus")
    part = "ipos" if interior else "pos"
    mat = summary.matrix(n, part)
    a = summary.level_index(u_minus)
    b = summary.level_index(u_plus)
    x = (mat[:, a] - mat[:, b]).astype(np.float64)  # pos is non-increasing in u
    m = x - x.mean()
    m2 = float((m**2).mean())
    m4 = float((m**4).mean())
    c4 = m4 - 3.0 * m2**2
    vol = summary.window_volume(n)
    length = u_plus - u_minus
    return ChentsovMoment(
        n=float(n), volume=vol, u_minus=u_minus, u_plus=u_plus, length=length,
        n_big=bool(length >= vol ** (-2.0 / 3.0)),
        ratio=m4 / (vol**2 * length**1.25),
        m4=m4, variance=m2, c4=c4,
        identity_gap=abs(m4 - (3.0 * m2**2 + c4)),
    )


@dataclass(frozen=True)
class LevelMomentRow:
    u_minus: float
    u_plus: float
    length: float
    mean_count: float
    mean_square: float
    ratio_m1: float  # mean count / length^(31/32)
    ratio_m2: float


def level_moment_diagnostic(model: ModelConfig, intervals, replicates: int,
                            seed: int, method: str = "fft") -> list:
    """Moment ratios of band-restricted critical-point counts.

    All intervals are evaluated on the same replicates: each field and its
    derivative grids are synthesized once, flagged cells are located once,
    and every band just filters by value.
    """
    if model.model != "gaussian":
        raise ValueError("critical-point counts need the gaussian model")
    bands = [(float(a), float(b)) for a, b in intervals]
    for a, b in bands:
        if not a < b:
            raise ValueError("intervals must have positive length")
    counts = np.zeros((replicates, len(bands)), dtype=np.int64)
    stream = make_stream(seed)
    for rep in range(replicates):
        noise = white_noise_for(model.kernel, model.window, model.spacing,
                                stream.child(rep))
        fld = synthesize_gaussian(model.kernel, noise, model.window,
                                  method=method)
        derivs = [
            synthesize_gradient(model.kernel, noise, model.window, axis=ax,
                                method=method).values
            for ax in range(model.kernel.dim)
        ]
        points = critical_cells(fld.values, derivs, band=None)
        values = np.array([p.value for p in points]) if points else np.empty(0)
        for k, (a, b) in enumerate(bands):
            counts[rep, k] = int(np.count_nonzero((values >= a) & (values < b)))
    rows = []
    for k, (a, b) in enumerate(bands):
        length = b - a
        m1 = float(counts[:, k].mean())
        m2 = float((counts[:, k].astype(np.float64) ** 2).mean())
        denom = length ** (31.0 / 32.0)
        rows.append(LevelMomentRow(u_minus=a, u_plus=b, length=length,
                                   mean_count=m1, mean_square=m2,
                                   ratio_m1=m1 / denom, ratio_m2=m2 / denom))
    return rows


# ---------------------------------------------------------------------------
# per-replicate paths and grid-refinement diagnostics


@dataclass(frozen=True)
class FunctionalPath:
    """One replicate's right-continuous step path on the level grid.

    ``jump_levels`` holds the exact levels where the underlying path jumps
    (computed from the persistence pairing) when available.
    """

    rep: int
    levels: np.ndarray
    values: np.ndarray
    jump_levels: np.ndarray | None = None


def functional_path(values, levels, q: int = 0, rep: int = 0,
                    tie: str = "asc", interior: bool = False) -> FunctionalPath:
    """Sample one field's Betti path and record its exact jump levels."""
    path = betti_curve(values, levels, q=q, tie=tie)
    jumps = betti_jump_levels(values, q=q, tie=tie)
    return FunctionalPath(
        rep=rep,
        levels=path.levels,
        values=(path.interior_count if interior else path.count).copy(),
        jump_levels=jumps,
    )


def paths_of(summary: EnsembleSummary, n, interior: bool = True) -> list:
    part = "icount" if interior else "count"
    mat = summary.matrix(n, part)
    return [
        FunctionalPath(rep=int(summary.rep_ids[r]), levels=summary.levels,
                       values=mat[r].copy())
        for r in range(mat.shape[0])
    ]


def refinement_agreement(model: ModelConfig, levels, replicates: int,
                         seed: int, q: int = 0) -> float:
    """Fraction of probe levels where counts at h and h/2 agree (coupled).

    Diagnostic only: reported, not asserted, since refinement can shift
    counts near levels that graze a saddle.
    """
    from .fields import refinement_pair

    if model.model != "gaussian":
        raise ValueError("refinement coupling needs the gaussian model")
    levels = np.asarray(levels, dtype=np.float64)
    stream = make_stream(seed)
    agree = 0
    total = 0
    for rep in range(replicates):
        coarse, fine = refinement_pair(model.kernel, model.window,
                                       model.spacing, stream.child(rep))
        pc = betti_curve(coarse.values, levels, q=q)
        pf = betti_curve(fine.values, levels, q=q)
        agree += int(np.count_nonzero(pc.count == pf.count))
        total += levels.size
    return agree / total
