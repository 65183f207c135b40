"""End-to-end acceptance battery.

Each test checks one advertised property of the library on a pinned
configuration and seed, records a PASS/FAIL line in the terminal summary,
and uses tolerances fixed in advance (3-sigma bands for Monte Carlo
estimates, exact equality for combinatorial identities).
"""
import json
import math
import time

import numpy as np
import pytest

import oracles
from fieldtopo.cli import main
from fieldtopo.clt import (
    chentsov_moment,
    ensemble_run,
    gaussian_rice_rate,
    normality_test,
    variance_scaling,
)
from fieldtopo.cubical import (
    betti_at,
    component_records,
    euler_at,
    persistence_diagram,
)
from fieldtopo.excursion import critical_point_count, diameter_tail
from fieldtopo.fields import (
    ModelConfig,
    discrete_variance,
    gaussian_stencil,
    sample_gaussian_field,
    synthesize_gaussian,
    white_noise_for,
)
from fieldtopo.geometry import Box
from fieldtopo.kernels import covariance, make_kernel, spectral_moments
from fieldtopo.perturbation import (
    change_probability_curve,
    delta_variance_profile,
    structural_zero_distance,
)
from fieldtopo.rng import make_stream
from fieldtopo.stats import fit_loglog_slope, k_statistics, normal_sf


def random_field(rng, shape, ties: bool):
    if ties:
        return rng.integers(0, max(shape), size=shape).astype(np.float64)
    return rng.normal(size=shape)


# --- 1: homology against the exhaustive rank oracle --------------------------


def test_criterion_01_homology_oracle(acceptance_report):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    checked = {2: 0, 3: 0}
    mismatches = 0
    for dim, shape, count in ((2, (4, 4), 60), (3, (3, 3, 3), 40)):
        for k in range(count):
            field = random_field(rng, shape, ties=k % 2 == 0)
            uv = np.unique(field)
            probes = [uv[uv.size // 4], uv[uv.size // 2], uv[3 * uv.size // 4]]
            diagram = persistence_diagram(field)
            for u in probes:
                for q in range(dim):
                    if betti_at(field, u, q) != oracles.betti_oracle(field, u, q):
                        mismatches += 1
                    if diagram.alive_count(u, q) != oracles.betti_oracle(field, u, q):
                        mismatches += 1
            for a, b in ((probes[0], probes[2]), (probes[1], probes[1])):
                for q in range(dim):
                    want = oracles.persistent_betti_oracle(field, a, b, q)
                    if diagram.persistent_rank(a, b, q) != want:
                        mismatches += 1
            checked[dim] += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and checked == {2: 60, 3: 40} and elapsed < 60
    assert acceptance_report(
        "boundary-matrix homology equals exhaustive rank oracle", ok,
        f"{sum(checked.values())} fields, {mismatches} mismatches, "
        f"{elapsed:.1f}s")


# --- 2: Euler characteristic identity ----------------------------------------


def test_criterion_02_euler_identity(acceptance_report):
    rng = np.random.default_rng(202)
    fields = 0
    bad = 0
    for dim, shape, count in ((2, (5, 5), 50), (3, (3, 3, 3), 50)):
        for k in range(count):
            field = random_field(rng, shape, ties=k % 2 == 0)
            uv = np.unique(field)
            probes = np.concatenate(
                [uv, (uv[:-1] + uv[1:]) / 2.0, [uv[0] - 1.0, uv[-1] + 1.0]])
            for u in probes:
                alternating = sum((-1) ** q * betti_at(field, float(u), q)
                                  for q in range(dim + 1))
                if not (alternating == euler_at(field, float(u))
                        == oracles.euler_oracle(field, float(u))):
                    bad += 1
            fields += 1
    ok = bad == 0 and fields == 100
    assert acceptance_report("euler characteristic identity", ok,
                             f"{fields} fields, {bad} violations")


# --- 3: synthesized covariance vs kernel autocorrelation ---------------------


def test_criterion_03_covariance_fidelity(acceptance_report):
    spec = make_kernel(2, "bump", 1.0)
    h = 1.0 / 16.0
    window = Box((0.0, 0.0), (4.0, 4.0))
    reps = 10_000
    anchor = (32, 32)  # vertex at (2.0, 2.0)
    lag_cells = [(4, 0), (8, 0), (4, 4), (12, 0), (16, 0)]

    start = time.perf_counter()
    stream = make_stream(316)
    products = np.zeros(len(lag_cells))
    square = 0.0
    for rep in range(reps):
        field = sample_gaussian_field(spec, window, h, stream.child(rep)).values
        f0 = field[anchor]
        square += f0 * f0
        for c, (da, db) in enumerate(lag_cells):
            products[c] += f0 * field[anchor[0] + da, anchor[1] + db]
    emp = products / reps
    emp_var = square / reps
    elapsed = time.perf_counter() - start

    stencil = gaussian_stencil(spec, h)
    lattice = np.array([
        h ** 2 * np.sum(stencil[da:, db:]
                        * stencil[:stencil.shape[0] - da,
                                  :stencil.shape[1] - db])
        for da, db in lag_cells
    ])
    theory = np.array([covariance(spec, (da * h, db * h))
                       for da, db in lag_cells])
    dv = discrete_variance(spec, h)

    se = np.sqrt((1.0 + lattice ** 2) / reps)
    z = np.abs(emp - lattice) / se
    z_var = abs(emp_var - dv) / (dv * math.sqrt(2.0 / reps))
    gaps = np.abs(lattice - theory)

    checks = [
        bool(np.all(z <= 3.0)),
        z_var <= 3.0,
        bool(np.all(gaps <= 2e-4)),
        abs(dv - 1.0) <= 2e-4,
        theory[-1] == 0.0,  # lag (1, 0) is past twice the support radius
        elapsed < 600,
    ]
    assert acceptance_report(
        "synthesized covariance matches kernel autocorrelation", all(checks),
        f"max|z|={z.max():.2f}, var z={z_var:.2f}, "
        f"max lattice gap={gaps.max():.1e}, {elapsed:.0f}s")


# --- 4: level-crossing rate vs the closed-form density -----------------------


def test_criterion_04_crossing_rate(acceptance_report):
    spec = make_kernel(1, "bump", 1.0)
    lam1 = float(spectral_moments(spec)[0])
    assert abs(lam1 - 12.310) < 0.01

    h = 1.0 / 128.0
    length = 512.0
    window = Box((0.0,), (length,))
    reps = 10_000
    levels = (0.5, 1.0)
    stream = make_stream(512128)

    ups = np.empty((reps, len(levels)))
    inner = np.empty((reps, len(levels)))
    verified = 0
    for rep in range(reps):
        field = sample_gaussian_field(spec, window, h, stream.child(rep)).values
        for c, u in enumerate(levels):
            mask = field >= u
            count = int(np.count_nonzero(~mask[:-1] & mask[1:]))
            interior = count - (1 if mask[-1] and not mask.all() else 0)
            ups[rep, c] = count
            inner[rep, c] = interior
            if rep < 30:
                recs = component_records(field, u)
                k_last = field.size - 1
                assert count == sum(r.bbox_lo[0] > 0 for r in recs)
                assert interior == sum(r.bbox_lo[0] > 0 and r.bbox_hi[0] < k_last
                                       for r in recs)
                verified += 1

    worst = 0.0
    ok = True
    for c, u in enumerate(levels):
        rate = gaussian_rice_rate(spec, u)
        z_up = (ups[:, c].mean() - length * rate) \
            / (ups[:, c].std(ddof=1) / math.sqrt(reps))
        z_in = (inner[:, c].mean() - (length * rate - normal_sf(u))) \
            / (inner[:, c].std(ddof=1) / math.sqrt(reps))
        worst = max(worst, abs(z_up), abs(z_in))
        ok = ok and abs(z_up) <= 3.0 and abs(z_in) <= 3.0
    ok = ok and verified == 60
    assert acceptance_report("level-crossing rate matches closed form", ok,
                             f"lambda1={lam1:.3f}, worst |z|={worst:.2f}")


# --- 5 + 9 share one ensemble ladder ------------------------------------------


LADDER_SIZES = (16.0, 32.0, 64.0, 128.0)


@pytest.fixture(scope="module")
def ladder():
    return ensemble_run(
        "gaussian", make_kernel(2, "bump", 1.0), 0.25, LADDER_SIZES,
        np.linspace(0.25, 2.0, 64), replicates=2000, seed=20260814, q=0,
    )


def test_criterion_05_clt_trend(acceptance_report, ladder):
    u = float(ladder.levels[9])
    assert abs(u - 0.5) < 1e-12
    se_skew = math.sqrt(6.0 / 2000.0)
    se_kurt = math.sqrt(24.0 / 2000.0)

    skews = []
    kurts = []
    for n in LADDER_SIZES:
        ks = k_statistics(ladder.samples(n, u))
        skews.append(abs(ks["skewness"]))
        kurts.append(abs(ks["excess"]))
    trend_ok = all(
        b <= a + 3.0 * math.sqrt(2.0) * se
        for series, se in ((skews, se_skew), (kurts, se_kurt))
        for a, b in zip(series, series[1:])
    )
    final_ok = skews[-1] <= 3.0 * se_skew and kurts[-1] <= 3.0 * se_kurt
    report = normality_test(ladder.samples(LADDER_SIZES[-1], u))
    scaling = variance_scaling(ladder, u, interior=True)
    var_ok = scaling.stabilized and scaling.rows[-1].ci_lo > 0.0

    ok = trend_ok and final_ok and report.pvalue > 0.01 and var_ok
    assert acceptance_report(
        "count moments tighten along the window ladder", ok,
        f"|skew|={'/'.join(f'{s:.3f}' for s in skews)}, "
        f"JB p={report.pvalue:.3f}, var ratio gap={scaling.last_gap:.3f}, "
        f"ci_lo={scaling.rows[-1].ci_lo:.3f}")


def test_criterion_09_tightness_moments(acceptance_report, ladder):
    lv = ladder.levels
    intervals = [(float(lv[9]), float(lv[18])),
                 (float(lv[18]), float(lv[27])),
                 (float(lv[9]), float(lv[27]))]
    moments = [chentsov_moment(ladder, n, iv)
               for n in (32.0, 64.0, 128.0) for iv in intervals]

    ratios = [m.ratio for m in moments]
    all_big = all(m.n_big for m in moments)
    spread = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf

    structure_ok = True
    for n in LADDER_SIZES:
        for part in ("pos", "neg", "ipos", "ineg"):
            if np.any(np.diff(ladder.matrix(n, part), axis=1) > 0):
                structure_ok = False
        if not np.array_equal(ladder.matrix(n, "count"),
                              ladder.matrix(n, "pos") - ladder.matrix(n, "neg")):
            structure_ok = False
        if not np.array_equal(ladder.matrix(n, "icount"),
                              ladder.matrix(n, "ipos") - ladder.matrix(n, "ineg")):
            structure_ok = False

    ok = all_big and spread < 10.0 and structure_ok
    assert acceptance_report(
        "increment moment ratios stay bounded", ok,
        f"spread={spread:.2f} over {len(moments)} cells, "
        f"monotone parts={structure_ok}")


# --- 6: narrow-band critical counts scale with band length -------------------


def test_criterion_06_band_linearity(acceptance_report):
    model = ModelConfig(model="gaussian", kernel=make_kernel(1, "bump", 1.0),
                        window=Box((0.0,), (64.0,)), spacing=1.0 / 32.0)
    reps = 10_000
    narrow = critical_point_count(model, (1.0, 1.05), reps, make_stream(606))
    wide = critical_point_count(model, (1.0, 1.10), reps, make_stream(606))
    ratio = wide.mean() / narrow.mean()
    # the two runs share fields through the common seed, so the ratio of the
    # per-replicate difference to the narrow count gives a coupled error bar
    diff = wide - ratio * narrow
    se = diff.std(ddof=1) / math.sqrt(reps) / narrow.mean()
    ok = 1.8 <= ratio <= 2.2
    assert acceptance_report(
        "narrow-band critical counts scale linearly", ok,
        f"ratio={ratio:.4f} (se~{se:.4f}) for doubled band length")


# --- 7: half-space refresh influence decays with distance --------------------


def test_criterion_07_resample_decay(acceptance_report):
    spec = make_kernel(2, "bump", 2.0)
    model = ModelConfig(model="gaussian", kernel=spec,
                        window=Box((0.0, 0.0), (24.0, 24.0)), spacing=0.25)
    interval = (0.25, 1.0)
    distances = [2, 4, 8, 16]
    reps = 10_000
    estimates, records = change_probability_curve(
        model, distances, interval, reps, make_stream(424242), axis=0)

    freqs = [e.frequency for e in estimates]
    decreasing = all(b < a for a, b in zip(freqs, freqs[1:]))
    separated = all(estimates[k].wilson_lo > estimates[k + 1].wilson_hi
                    for k in range(len(estimates) - 1))

    def base_diameter(rep: int) -> float:
        rep_stream = make_stream(424242).child(rep)
        noise = white_noise_for(spec, model.window, model.spacing,
                                rep_stream.child(0))
        base = synthesize_gaussian(spec, noise, model.window)
        recs = component_records(base.values, interval[0])
        return max((r.diameter(model.spacing) for r in recs), default=0.0)

    by_key = {(r.rep, r.j[0] - r.i[0]): r.changed for r in records}
    zero_ok = True
    for (rep, k), changed in by_key.items():
        if changed and k >= 8:
            if k > structural_zero_distance(model, base_diameter(rep)):
                zero_ok = False
    for rep in range(200):
        bound = structural_zero_distance(model, base_diameter(rep))
        for k in (8, 16):
            if k > bound and by_key[(rep, k)]:
                zero_ok = False

    ok = decreasing and separated and zero_ok
    assert acceptance_report(
        "refresh influence decays with distance", ok,
        f"freqs={'/'.join(f'{f:.4f}' for f in freqs)}, "
        f"wilson separated={separated}, structural zeros={zero_ok}")


# --- 8: coupled-difference variance law --------------------------------------


def test_criterion_08_delta_variance(acceptance_report):
    region = ("halfspace", (8.0,), (10.0,))  # bisector at x = 9
    window = Box((0.0,), (16.0,))
    h = 1.0 / 64.0
    reps = 4000
    se_factor = math.sqrt(2.0 / (reps - 1))

    bump = ModelConfig(model="gaussian", kernel=make_kernel(1, "bump", 1.0),
                       window=window, spacing=h)
    probes_b = [[9.0], [8.875], [8.75], [8.625], [8.5], [8.25]]
    prof_b = delta_variance_profile(bump, region, probes_b, reps,
                                    make_stream(88), method="direct")
    z_b = np.abs(prof_b.empirical[:4] - prof_b.theory[:4]) \
        / (prof_b.theory[:4] * se_factor)
    bump_ok = (bool(np.all(z_b <= 3.0))
               and np.all(prof_b.theory[4:] == 0.0)
               and np.all(prof_b.empirical[4:] == 0.0))

    poly_spec = make_kernel(1, "polydecay", 1.0, eta=16.0)
    poly = ModelConfig(model="gaussian", kernel=poly_spec,
                       window=window, spacing=h)
    probes_p = [[8.5], [8.0], [7.5], [7.0]]
    prof_p = delta_variance_profile(poly, region, probes_p, reps,
                                    make_stream(89), method="direct")
    z_p = np.abs(prof_p.empirical - prof_p.theory) / (prof_p.theory * se_factor)
    slope = prof_p.tail_slope()
    slope_bound = -2.0 * 16.0 + 1.0 + 0.5
    poly_ok = bool(np.all(z_p <= 3.0)) and slope <= slope_bound

    ok = bump_ok and poly_ok
    assert acceptance_report(
        "coupled-difference variance law", ok,
        f"bump max|z|={z_b.max():.2f} (far probes exactly 0), "
        f"polydecay max|z|={z_p.max():.2f}, tail slope={slope:.1f}"
        f" <= {slope_bound}")


# --- 10: component diameter tail ----------------------------------------------


def test_criterion_10_diameter_tail(acceptance_report):
    model = ModelConfig(model="gaussian", kernel=make_kernel(2, "bump", 1.0),
                        window=Box((0.0, 0.0), (24.0, 24.0)), spacing=0.25)
    reps = 10_000
    tail = diameter_tail(model, 0.5, [0.5, 1.0, 2.0, 4.0, 8.0], reps,
                         make_stream(1010))
    monotone = bool(np.all(np.diff(tail.probs) <= 0))
    resolved = tail.probs[2:] * reps
    enough = bool(np.all(resolved >= 10))
    slope, _ = fit_loglog_slope(tail.radii[2:], tail.probs[2:])
    occupancy = tail.n_occupied / tail.n
    occ_ok = abs(occupancy - normal_sf(0.5)) <= 0.02

    ok = monotone and enough and slope <= -2.0 and occ_ok
    assert acceptance_report(
        "component diameter tail decays fast", ok,
        f"probs={'/'.join(f'{p:.4f}' for p in tail.probs)}, "
        f"slope={slope:.2f} over radii >= 2, occupancy={occupancy:.3f}")


# --- 11: bitwise reproducibility -----------------------------------------------


RESAMPLE_TOML = """\
experiment = "resample"
seed = 21

[model]
kind = "gaussian"
dim = 1
spacing = 0.25

[kernel]
family = "bump"
b0 = 1.0

[params]
window_size = 16.0
distances = [2, 4]
interval = [0.5, 1.0]
replicates = 50
"""


def test_criterion_11_reproducibility(acceptance_report, tmp_path):
    config = tmp_path / "run.toml"
    config.write_text(RESAMPLE_TOML)
    manifests = []
    for name in ("a", "b"):
        outdir = tmp_path / name
        assert main(["run", "--config", str(config), "--out", str(outdir)]) == 0
        with open(outdir / "manifest.json") as fh:
            manifests.append(json.load(fh))
        assert main(["report", "--out", str(outdir)]) == 0
    cli_ok = manifests[0]["outputs"] == manifests[1]["outputs"]
    files_ok = all(
        (tmp_path / "a" / nm).read_bytes() == (tmp_path / "b" / nm).read_bytes()
        for nm in manifests[0]["outputs"]
    )

    kernel = make_kernel(1, "bump", 1.0)
    levels = np.linspace(0.5, 1.5, 5)
    args = ("gaussian", kernel, 0.25, [8.0, 16.0], levels)
    full = ensemble_run(*args, replicates=40, seed=777)
    first = ensemble_run(*args, replicates=20, seed=777)
    second = ensemble_run(*args, replicates=20, seed=777, rep_offset=20)
    merge_ok = True
    for merged in (first.merge(second), second.merge(first)):
        if merged.config_hash != full.config_hash:
            merge_ok = False
        if not np.array_equal(merged.rep_ids, full.rep_ids):
            merge_ok = False
        for n in (8.0, 16.0):
            for part in ("count", "pos", "neg", "icount", "ipos", "ineg"):
                if not np.array_equal(merged.matrix(n, part),
                                      full.matrix(n, part)):
                    merge_ok = False

    ok = cli_ok and files_ok and merge_ok
    assert acceptance_report(
        "bitwise reproducibility", ok,
        f"cli checksums equal={cli_ok}, split-merge exact={merge_ok}")
