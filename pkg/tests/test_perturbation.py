"""Noise-resampling experiments: local functional semantics, change
probabilities with coupled streams, stabilization bookkeeping, the
conditional-variance construction, and coupled-difference variance laws."""
from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import quad

from fieldtopo.errors import GeometryError
from fieldtopo.fields import (
    ModelConfig,
    halfspace_cell_mask,
    synthesize_gaussian,
    white_noise_for,
)
from fieldtopo.geometry import Box
from fieldtopo.kernels import evaluate, make_kernel, support_radius
from fieldtopo.perturbation import (
    StabilizationSample,
    box_overlap_variance,
    change_probability_curve,
    delta_variance_profile,
    halfspace_overlap_variance,
    lattice_distance_weight,
    local_functional,
    sigma_conditional,
    stabilization_radius,
    stabilization_tail,
    structural_zero_distance,
    topology_change_probability,
)
from fieldtopo.rng import RngStream

BUMP1 = make_kernel(1, "bump", 1.0)


def model1(window=8.0, spacing=0.5):
    return ModelConfig("gaussian", BUMP1, Box((0.0,), (float(window),)), spacing)


def test_lattice_distance_weight():
    assert lattice_distance_weight((0, 0), (3, 4)) == pytest.approx(1 + 5 / 3)
    assert lattice_distance_weight((2,), (2,)) == 1.0
    assert lattice_distance_weight((1,), (4,)) == 2.0


def test_local_functional_hand_example():
    # two peaks (3 at x=2, 2 at x=5) over a saddle of 1 at x=3.5
    f = np.array([0, 0, 0, 2, 3, 2, 1.5, 1, 1.5, 1.8, 2, 1.2, 0, 0, 0, 0, 0],
                 dtype=float)
    win = Box((0.0,), (8.0,))
    h = 0.5
    # component attributed to x=2 exists at both endpoints: difference 0
    assert local_functional(f, win, h, (2,), 1.5, 2.5) == 0
    assert local_functional(f, win, h, (2,), 0.6, 1.5) == 0
    # at 3.5 nothing survives: the peak contributes its +1
    assert local_functional(f, win, h, (2,), 1.5, 3.5) == 1
    # the secondary peak is born between 2.5 and 1.5 ...
    assert local_functional(f, win, h, (5,), 1.5, 2.5) == 1
    # ... and is absorbed into the x=2 component below 1: difference -1
    assert local_functional(f, win, h, (5,), 0.6, 1.5) == -1
    with pytest.raises(ValueError):
        local_functional(f, win, h, (2,), 2.0, 1.0)


def test_resample_record_roundtrip_and_stream_plumbing():
    model = model1()
    est, records = topology_change_probability(
        model, (4,), (6,), (0.25, 1.0), 6, RngStream(99))
    assert est.n == 6 and len(records) == 6
    assert est.n_changed == sum(r.changed for r in records)
    assert est.frequency == est.n_changed / 6
    assert est.wilson_lo <= est.frequency <= est.wilson_hi
    assert est.lattice_dist == 2.0
    row = records[0].to_row()
    assert len(row) == 9
    assert row[1] == "4" and row[2] == "6"
    assert row[3] == pytest.approx(1 + 2 / 3)
    # records reproduce from the documented stream layout
    for rec in records[:3]:
        rep_stream = RngStream(99).child(rec.rep)
        noise = white_noise_for(model.kernel, model.window, model.spacing,
                                rep_stream.child(0))
        base = synthesize_gaussian(model.kernel, noise, model.window)
        assert local_functional(base.values, model.window, model.spacing,
                                rec.i, rec.u_minus, rec.u_plus) == rec.before
    est2, _ = topology_change_probability(
        model, (4,), (6,), (0.25, 1.0), 6, RngStream(99))
    assert est2 == est


def test_topology_change_probability_validation():
    model = model1()
    with pytest.raises(ValueError):
        topology_change_probability(model, (4,), (4,), (0.0, 1.0), 3, RngStream(1))
    with pytest.raises(ValueError):
        topology_change_probability(model, (4,), (6,), (0.0, 1.0), 0, RngStream(1))
    shot = ModelConfig("shot", make_kernel(1, "bump", 1.0, normalization="L1"),
                       Box((0.0,), (8.0,)), 0.5, intensity=1.0,
                       marks=__import__("fieldtopo.rng", fromlist=["point_mass"]).point_mass(1.0))
    with pytest.raises(ValueError):
        topology_change_probability(shot, (4,), (6,), (0.0, 1.0), 3, RngStream(1))


def test_out_of_reach_refresh_never_changes():
    # bisector beyond the padded noise domain: the refresh mask is empty,
    # so after == before identically, not just with high probability
    model = model1()
    est, records = topology_change_probability(
        model, (1,), (35,), (0.25, 1.0), 40, RngStream(7))
    assert est.n_changed == 0
    assert est.frequency == 0.0
    assert all(r.after == r.before for r in records)


def test_exchange_symmetry_of_change_probability():
    # reflecting the window swaps the roles of i and j: the two change
    # probabilities agree (two-proportion z-test at the 1% level)
    model = model1(window=16.0, spacing=0.25)
    n = 300
    e1, _ = topology_change_probability(model, (7,), (9,), (0.25, 1.0), n,
                                        RngStream(2024))
    e2, _ = topology_change_probability(model, (9,), (7,), (0.25, 1.0), n,
                                        RngStream(4202))
    pbar = (e1.n_changed + e2.n_changed) / (2 * n)
    assert 0 < pbar < 1  # the configuration actually produces changes
    z = (e1.frequency - e2.frequency) / np.sqrt(pbar * (1 - pbar) * 2 / n)
    assert abs(z) < 2.58


def test_change_probability_curve_coupling():
    model = model1(window=12.0)
    reps = 8
    ests, records = change_probability_curve(
        model, [1, 2, 4], (0.25, 1.0), reps, RngStream(31))
    assert [e.lattice_dist for e in ests] == [1.0, 2.0, 4.0]
    assert all(e.n == reps for e in ests)
    assert len(records) == 3 * reps
    # the same replicate shares its base draw across offsets
    by_rep = {}
    for r in records:
        by_rep.setdefault(r.rep, set()).add(r.before)
    assert all(len(v) == 1 for v in by_rep.values())
    # estimates recompute from their records
    for e in ests:
        mine = [r for r in records if r.j == e.j]
        assert e.n_changed == sum(r.changed for r in mine)
    with pytest.raises(ValueError):
        change_probability_curve(model, [0, 1], (0.0, 1.0), 2, RngStream(1))
    with pytest.raises(GeometryError):
        change_probability_curve(model, [1], (0.0, 1.0), 2, RngStream(1), axis=1)


def test_stabilization_radius_semantics():
    model = model1(window=12.0)
    radii = [1, 2, 3]
    samples, records = stabilization_radius(
        model, radii, (0.25, 1.0), 30, RngStream(77))
    assert len(samples) == 30
    per_rep = {}
    for r in records:
        k = radii.index(int(r.j[0]) - 6)  # center of [0,12] is 6
        per_rep.setdefault(r.rep, {})[k] = r.changed
    for s in samples:
        flags = [per_rep[s.rep][k] for k in range(len(radii))]
        changed_idx = [k for k, f in enumerate(flags) if f]
        if not changed_idx:
            assert s.radius == 1.0 and not s.censored
        elif changed_idx[-1] == len(radii) - 1:
            assert s.radius == 3.0 and s.censored
        else:
            assert s.radius == float(radii[changed_idx[-1] + 1])
            assert not s.censored
    with pytest.raises(ValueError):
        stabilization_radius(model, [2, 2], (0.0, 1.0), 4, RngStream(1))
    with pytest.raises(ValueError):
        stabilization_radius(model, [], (0.0, 1.0), 4, RngStream(1))
    with pytest.raises(ValueError):
        stabilization_radius(model, [-1, 2], (0.0, 1.0), 4, RngStream(1))


def test_stabilization_tail_manual():
    samples = [
        StabilizationSample(0, 1.0, False),
        StabilizationSample(1, 3.0, False),
        StabilizationSample(2, 3.0, True),
        StabilizationSample(3, 2.0, False),
    ]
    tail = stabilization_tail(samples, [1, 2, 3])
    # P(R > 1) counts radii > 1: samples 1, 2, 3
    # P(R > 2) counts 3.0, 3.0-censored
    # P(R > 3): only the censored sample remains in the tail
    assert np.allclose(tail, [0.75, 0.5, 0.25])


def test_structural_zero_distance_formula():
    model = model1(window=8.0, spacing=0.25)
    d0 = structural_zero_distance(model, 0.0)
    want = 2.0 * (0.5 + 0.5 + 3 * 0.25)
    assert d0 == pytest.approx(want)
    assert structural_zero_distance(model, 2.0) == pytest.approx(want + 4.0)
    assert structural_zero_distance(model, 3.0) > structural_zero_distance(model, 1.0)


# ---------------------------------------------------------------------------
# conditional variance


def test_sigma_conditional_postconditions():
    model = model1(window=8.0, spacing=0.5)
    res = sigma_conditional(model, box_side=2, replicates=10,
                            inner_replicates=4, interval=(0.25, 1.0),
                            stream=RngStream(55), shifts=(-1.0, 0.0, 1.0))
    assert res.sigma2 >= 0.0
    assert res.sigma2_debiased <= res.sigma2
    assert np.all(res.inner_var >= 0.0)
    assert res.z_values.shape == (10,)
    assert res.g_hat.shape == (10,)
    assert res.shift_curve.shape == (3,)
    # the unshifted curve entry is exactly the mean of the inner means
    assert res.shift_curve[1] == pytest.approx(res.g_mean, abs=1e-12)
    # the refresh leaves the marginal law invariant: E G = 0
    assert abs(res.g_mean) <= 4 * res.g_mean_se + 1e-9
    r2 = sigma_conditional(model, box_side=2, replicates=10,
                           inner_replicates=4, interval=(0.25, 1.0),
                           stream=RngStream(55), shifts=(-1.0, 0.0, 1.0))
    assert np.array_equal(res.g_hat, r2.g_hat)


def test_sigma_conditional_z_marginal():
    # outer draws are N(0, side^d): check the sample std at 4 sigma
    model = model1(window=8.0, spacing=0.5)
    res = sigma_conditional(model, box_side=4, replicates=40,
                            inner_replicates=2, interval=(0.25, 1.0),
                            stream=RngStream(66))
    want = 2.0  # sqrt(4^1)
    s = res.z_values.std(ddof=1)
    assert abs(s - want) < 4 * want / np.sqrt(2 * 39)


def test_sigma_conditional_validation():
    model = model1()
    with pytest.raises(ValueError):
        sigma_conditional(model, 0, 4, 2, (0.0, 1.0), RngStream(1))
    with pytest.raises(ValueError):
        sigma_conditional(model, 2, 1, 2, (0.0, 1.0), RngStream(1))
    with pytest.raises(ValueError):
        sigma_conditional(model, 2, 4, 1, (0.0, 1.0), RngStream(1))
    with pytest.raises(ValueError):
        sigma_conditional(model, 2, 4, 2, (1.0, 0.0), RngStream(1))
    with pytest.raises(ValueError):
        sigma_conditional(model, 2, 4, 2, (0.0, 1.0), RngStream(1),
                          shifts=(1.0, 2.0))


def test_condition_on_sum_is_exact():
    from fieldtopo.perturbation import _condition_on_sum

    noise = white_noise_for(BUMP1, Box((0.0,), (4.0,)), 0.25, RngStream(3))
    mask = np.zeros(noise.shape, dtype=bool)
    mask[3:9] = True
    cond = _condition_on_sum(noise, mask, 1.75)
    assert cond.values[mask].sum() == pytest.approx(1.75, abs=1e-12)
    assert np.array_equal(cond.values[~mask], noise.values[~mask])


# ---------------------------------------------------------------------------
# coupled-difference variance


def test_halfspace_overlap_variance_limits():
    r = support_radius(BUMP1)
    # probe deep inside the refreshed region: full 2 * ||q||^2 = 2
    assert halfspace_overlap_variance(BUMP1, (0.0,), (4.0,), (4.0,)) == \
        pytest.approx(2.0, abs=1e-5)
    # probe beyond the kernel reach on the kept side: exactly 0
    assert halfspace_overlap_variance(BUMP1, (0.0,), (4.0,), (2.0 - r - 0.01,)) == 0.0
    # intermediate probe against direct quadrature
    probe = 1.8
    s = probe - 2.0
    want, _ = quad(lambda x: evaluate(BUMP1, (x,)) ** 2, -r, s)
    got = halfspace_overlap_variance(BUMP1, (0.0,), (4.0,), (probe,))
    assert got == pytest.approx(2.0 * want, abs=1e-6)


def test_halfspace_overlap_variance_far_tail_stays_relatively_accurate():
    # deep in a polydecay tail the overlap integral sits far below the
    # absolute quadrature tolerance; the refinement pass must keep it
    # relatively accurate instead of accepting a one-panel estimate
    k = make_kernel(1, "polydecay", 1.0, eta=16.0)
    r = support_radius(k)
    for probe in (8.0, 7.5, 7.0):
        s = probe - 9.0
        want, _ = quad(lambda x: evaluate(k, (x,)) ** 2, -r, s,
                       epsabs=0.0, epsrel=1e-11)
        got = halfspace_overlap_variance(k, (8.0,), (10.0,), (probe,))
        assert got == pytest.approx(2.0 * want, rel=1e-5)


def test_halfspace_overlap_variance_oblique_matches_axis_aligned():
    # the kernel is radial, so only the signed bisector distance matters
    k = make_kernel(2, "bump", 1.0)
    probe = (0.8, 0.8)
    s = float((np.array(probe) - np.array([1.0, 1.0])) @ (np.ones(2) / np.sqrt(2)))
    oblique = halfspace_overlap_variance(k, (0.0, 0.0), (2.0, 2.0), probe)
    aligned = halfspace_overlap_variance(k, (0.0, 0.0), (2.0, 0.0), (1.0 + s, 0.0))
    assert oblique == pytest.approx(aligned, abs=5e-3)


def test_box_overlap_variance():
    assert box_overlap_variance(BUMP1, Box((0.0,), (4.0,)), (2.0,)) == \
        pytest.approx(2.0, abs=1e-5)
    assert box_overlap_variance(BUMP1, Box((0.0,), (1.0,)), (2.0,)) == 0.0
    k2 = make_kernel(2, "bump", 1.0)
    assert box_overlap_variance(k2, Box((0.0, 0.0), (4.0, 4.0)), (2.0, 2.0)) == \
        pytest.approx(2.0, abs=1e-4)


def test_delta_variance_profile_matches_theory():
    # spacing fine relative to the support, so the refreshed-cell sum tracks
    # the continuum overlap integral
    h = 0.0625
    model = model1(window=8.0, spacing=h)
    reps = 600
    probes = [(3.9375,), (4.0,), (4.5,), (5.25,)]
    prof = delta_variance_profile(model, ("halfspace", (3.0,), (5.0,)),
                                  probes, reps, RngStream(808))
    assert prof.dist == pytest.approx([h, 0.0, 0.0, 0.0])
    assert prof.reps == reps
    # exact lattice identity: Var = 2h * sum over refreshed cells of q(x-c)^2
    noise = white_noise_for(model.kernel, model.window, h, RngStream(0))
    mask = halfspace_cell_mask(noise, (3.0,), (5.0,))
    centers = noise.cell_centers(0)[mask]
    for probe, emp, th in zip(probes, prof.empirical, prof.theory):
        lattice = 2 * h * float(
            np.sum(evaluate(BUMP1, (probe[0] - centers)[:, None]) ** 2))
        se = lattice * np.sqrt(2.0 / (reps - 1))
        assert abs(emp - lattice) < 4 * se + 1e-12
        assert abs(th - lattice) < 0.02 * max(th, lattice) + 1e-12
    # probes fully inside the refreshed far side see the full variance 2
    assert prof.theory[-1] == pytest.approx(2.0, abs=1e-5)


def test_delta_variance_profile_box_and_validation():
    model = model1(window=8.0, spacing=0.25)
    box = Box((2.0,), (3.0,))
    prof = delta_variance_profile(model, ("box", box), [(2.5,), (4.0,)],
                                  120, RngStream(909), method="direct")
    assert prof.dist == pytest.approx([0.0, 1.0])
    # past the support with direct convolution: identically zero samples
    assert prof.theory[1] == 0.0
    assert prof.empirical[1] == 0.0
    with pytest.raises(ValueError):
        delta_variance_profile(model, ("box", box), [(2.5,)], 1, RngStream(1))
    with pytest.raises(ValueError):
        delta_variance_profile(model, ("sphere", box), [(2.5,)], 4, RngStream(1))
    with pytest.raises(GeometryError):
        delta_variance_profile(model, ("box", box), [(2.51,)], 4, RngStream(1))
    with pytest.raises(ValueError):
        prof.tail_slope()  # only one positive-distance probe


def test_delta_variance_tail_slope_runs():
    model = model1(window=8.0, spacing=0.25)
    prof = delta_variance_profile(model, ("halfspace", (3.0,), (5.0,)),
                                  [(3.25,), (3.5,), (3.75,)], 200, RngStream(11))
    assert np.all(prof.dist > 0)
    slope = prof.tail_slope()
    assert isinstance(slope, float)
    assert slope < 0  # variance decays away from the bisector
