import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impmpm import metrics as M
from impmpm.exceptions import EmptySetError, TraceFormatError
from impmpm.trace_io import Trace


def trace_of(positions, masses=None, masks=None, grid_lim=1.0, dt=0.01, **extra):
    positions = np.asarray(positions, dtype=float)
    T, N = positions.shape[:2]
    masses = np.ones(N) if masses is None else np.asarray(masses, dtype=float)
    masks = np.zeros((T, N), dtype=bool) if masks is None else np.asarray(masks, dtype=bool)
    return Trace(masses=masses, ref_volumes=np.full(N, 1e-6), positions=positions, clamp_masks=masks,
                 grid_lim=grid_lim, frame_dt=dt, substep_dt=dt, multiplier=1, steps_per_frame=1,
                 extra=dict(extra))


def random_trace(rng, T=6, N=5):
    return trace_of(rng.uniform(0.1, 0.9, (T, N, 3)), rng.uniform(0.5, 2.0, N))


# -- BMF / gate / frontier -------------------------------------------------------


def test_bmf_examples():
    assert M.bmf_from_masks([[1, 1, 0, 0]], np.ones(4))[0] == 0.5
    assert np.all(M.bmf_from_masks(np.zeros((3, 4)), np.ones(4)) == 0)
    assert M.bmf_from_masks([[0, 1]], [1.0, 3.0])[0] == 0.75


def test_bmf_requires_masks():
    tr = trace_of(np.full((1, 2, 3), 0.5))
    tr.clamp_masks = None
    with pytest.raises(TraceFormatError):
        M.bmf_series(tr)


def test_gate_examples():
    assert M.gate_from_bmf([0.6] * 6 + [0.0] * 4) == (0.6, True)
    assert M.gate_from_bmf(np.zeros(10)) == (0.0, False)
    assert M.gate_from_bmf(np.full(10, 0.5)) == (0.0, False)
    # exactly half the frames above threshold is still a pass (strict >)
    assert M.gate_from_bmf([0.9] * 5 + [0.0] * 5) == (0.5, False)


def test_gate_on_aborted_trace_counts_missing_frames():
    tr = trace_of(np.full((2, 3, 3), 0.5), aborted=True, frames_requested=10)
    r, failed = M.gate(tr)
    assert r == pytest.approx(0.8) and failed
    padded = M.complete_aborted(tr)
    assert padded.num_frames == 10 and padded.clamp_masks[2:].all()
    empty = trace_of(np.zeros((0, 2, 3)), aborted=True, frames_requested=3)
    assert np.all(M.complete_aborted(empty).positions == 0.5)


_K = [1, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20]


@pytest.mark.parametrize("passing,k_max,fail", [
    (set(_K), 20, 0.0),          # every multiplier passes
    ({1}, 1, 90.9),              # only the base step passes
    (set(), 0, 100.0),           # nothing passes
])
def test_frontier_reference_cells(passing, k_max, fail):
    rep = M.stability_frontier({k: k in passing for k in _K})
    assert rep.k_max == k_max
    assert round(rep.fail_percent, 1) == fail


def test_frontier_via_gated_traces():
    traces = []
    for k in (1, 2, 4):
        masks = np.zeros((10, 2), dtype=bool)
        if k == 4:
            masks[:7] = True
        tr = trace_of(np.full((10, 2, 3), 0.5), masks=masks)
        tr.multiplier = k
        traces.append(tr)
    outcomes, ratios = M.sweep_outcomes(traces)
    rep = M.stability_frontier(outcomes, ratios)
    assert rep.k_max == 2 and ratios[4] == pytest.approx(0.7)
    with pytest.raises(EmptySetError):
        M.stability_frontier({})


# -- drift -----------------------------------------------------------------------


def test_comd_examples():
    rng = np.random.default_rng(0)
    a = random_trace(rng)
    assert M.comd(a, a)[1] == 0.0
    d = np.array([0.01, -0.02, 0.03])
    b = trace_of(a.positions + d, a.masses, grid_lim=1.0)
    series, mean = M.comd(b, a)
    np.testing.assert_allclose(series, np.linalg.norm(d), rtol=1e-12)
    # two unequal masses, one frame, written out longhand
    x1 = trace_of([[[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]]], [1.0, 3.0], grid_lim=2.0)
    x2 = trace_of([[[0.2, 0.2, 0.3], [0.5, 0.1, 0.5]]], [1.0, 3.0], grid_lim=2.0)
    c1 = ((0.1 + 1.5) / 4, (0.2 + 1.5) / 4, (0.3 + 1.5) / 4)
    c2 = ((0.2 + 1.5) / 4, (0.2 + 0.3) / 4, (0.3 + 1.5) / 4)
    expect = np.sqrt(sum((p - q) ** 2 for p, q in zip(c1, c2))) / 2.0
    assert M.comd(x2, x1)[1] == pytest.approx(expect, rel=1e-12)


def test_mwrmsd_examples():
    rng = np.random.default_rng(1)
    a = random_trace(rng)
    assert M.mwrmsd(a, a)[1] == 0.0
    one = trace_of([[[0.5, 0.5, 0.5]]])
    hit = trace_of([[[0.5, 0.5, 0.5]]], masks=[[True]])
    assert M.mwrmsd(hit, one)[0][0] == 1.0
    assert M.mwrmsd(one, hit)[0][0] == 1.0
    far = trace_of([[[0.0, 0.0, 0.0]]], grid_lim=0.5)
    near = trace_of([[[0.5, 0.5, 0.5]]], grid_lim=0.5)
    assert M.mwrmsd(far, near)[0][0] == 1.0
    # hand value: two particles, masses 1 and 3, only the heavy one moves by 0.1
    p = trace_of([[[0.2, 0.2, 0.2], [0.6, 0.6, 0.6]]], [1.0, 3.0])
    q = trace_of([[[0.2, 0.2, 0.2], [0.7, 0.6, 0.6]]], [1.0, 3.0])
    assert M.mwrmsd(q, p)[1] == pytest.approx(np.sqrt(3 * 0.01 / 4), rel=1e-12)


def test_drift_mismatch_rejected():
    rng = np.random.default_rng(2)
    with pytest.raises(TraceFormatError):
        M.comd(random_trace(rng, N=4), random_trace(rng, N=5))
    with pytest.raises(TraceFormatError):
        M.mwrmsd(random_trace(rng, T=3), random_trace(rng, T=4))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_drift_ranges_and_permutation(seed):
    rng = np.random.default_rng(seed)
    a, b = random_trace(rng), random_trace(rng)
    b.masses = a.masses.copy()
    b.clamp_masks = rng.random(b.clamp_masks.shape) < 0.2
    c_series, c = M.comd(a, b)
    m_series, m = M.mwrmsd(a, b)
    assert 0 <= c <= np.sqrt(3) and 0 <= m <= 1
    assert c == pytest.approx(c_series.mean()) and m == pytest.approx(m_series.mean())
    perm = rng.permutation(a.num_particles)
    pa = trace_of(a.positions[:, perm], a.masses[perm], a.clamp_masks[:, perm])
    pb = trace_of(b.positions[:, perm], b.masses[perm], b.clamp_masks[:, perm])
    assert M.comd(pa, pb)[1] == pytest.approx(c, rel=1e-12, abs=1e-15)
    assert M.mwrmsd(pa, pb)[1] == pytest.approx(m, rel=1e-12, abs=1e-15)


def test_drift_auc_examples():
    ks = _K
    assert M.drift_auc(ks, np.zeros(11)) == 0.0
    assert M.drift_auc(ks, np.full(11, 0.3)) == pytest.approx(0.3)
    ramp = [(k - 1) / 19 for k in ks]
    assert M.drift_auc(ks, ramp) == pytest.approx(0.5)
    assert M.drift_auc(ks, ramp, [k == 1 for k in ks]) == 1.0
    # invalid points are dropped, the span shrinks to the valid ones
    assert M.drift_auc([1, 2, 4], [0.0, 1.0, 9.0], [True, True, False]) == pytest.approx(0.5)


# -- plausibility ------------------------------------------------------------------


def test_mass_drift_examples():
    tr = trace_of(np.full((4, 2, 3), 0.5))
    assert np.all(M.mass_drift(tr) == 0) and M.mass_drift(tr).size == 4
    np.testing.assert_allclose(M.mass_drift([2.0, 2.2])[1], 0.1, rtol=1e-10)
    assert M.mass_drift([5.0]).tolist() == [0.0]


def test_momentum_linear_motion():
    t = np.arange(8)[:, None, None] * 0.01
    x0 = np.array([[0.2, 0.3, 0.4], [0.5, 0.5, 0.5]])
    v = np.array([[0.1, 0.0, -0.2], [0.3, 0.1, 0.0]])
    tr = trace_of(x0 + v * t, [1.0, 2.0])
    P, L, c = M.momentum_series(tr)
    np.testing.assert_allclose(P, np.broadcast_to((v * [[1.0], [2.0]]).sum(0), P.shape), atol=1e-12)
    one = trace_of(x0[:1] + v[:1] * t)
    assert np.all(M.momentum_series(one)[1] == 0)


def test_rigid_rotor_angular_momentum():
    omega, r, m, dt = 2.0, 0.1, 1.5, 1e-3
    t = np.arange(50) * dt
    ang = omega * t
    c = np.array([0.5, 0.5, 0.5])
    p1 = c + r * np.stack([np.cos(ang), np.sin(ang), 0 * ang], 1)
    p2 = c - r * np.stack([np.cos(ang), np.sin(ang), 0 * ang], 1)
    tr = trace_of(np.stack([p1, p2], 1), [m, m], dt=dt)
    _, L, _ = M.momentum_series(tr)
    I = 2 * m * r**2
    np.testing.assert_allclose(L[1:-1, 2], I * omega, rtol=(omega * dt) ** 2)


def test_irregularity_examples():
    t = np.arange(1, 7, dtype=float)
    P = np.stack([t**2, 0 * t, 0 * t], 1)
    imp, tor = M.irregularity(P, P * 0.5, 1.0, 1.0, 1.0)
    np.testing.assert_allclose(imp, 2.0, rtol=1e-10)
    np.testing.assert_allclose(tor, 1.0, rtol=1e-10)
    lin = np.stack([3 * t + 1, -t, 0 * t], 1)
    assert np.all(M.irregularity(lin, lin, 2.0, 1.0, 0.1)[0] == 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.integers(3, 12))
def test_irregularity_affine_is_zero(coef, T):
    t = np.arange(T, dtype=float)[:, None]
    a, b = np.array(coef[:3]), np.array(coef[3:])
    series = a + b * t
    d2 = M.second_difference_norm(series)
    np.testing.assert_allclose(d2, 0.0, atol=1e-12)


def test_short_series_rejected():
    with pytest.raises(Exception):
        M.finite_difference_velocities(np.zeros((1, 2, 3)), 0.1)
    with pytest.raises(Exception):
        M.second_difference_norm(np.zeros((2, 3)))


# -- saturation ----------------------------------------------------------------------


def test_sat_ratio_examples():
    assert M.sat_ratio(np.ones((3, 4, 4))) == (1.0, 0.0, 0.0)
    half = np.zeros((2, 4, 4))
    half[:, :2] = 1.0
    np.testing.assert_allclose(M.sat_ratio_series(half), 0.5)
    assert M.sat_ratio_series(np.full((1, 1, 1), 0.98))[0] == 1.0
    assert M.sat_ratio_series(np.full((1, 1, 1), 0.98 - 1e-12))[0] == 0.0
    rgb = np.ones((1, 2, 2, 3))
    assert M.sat_ratio_series(rgb)[0] == 1.0
    with pytest.raises(EmptySetError):
        M.sat_ratio(np.zeros((0, 2, 2)))


# -- ablation ------------------------------------------------------------------------


def rec(frame, converged=True, t=1.0, R0=1.0, R_end=1e-6, iters=2, gmres=(3, 4)):
    return {"frame": frame, "converged": converged, "wall_time": t, "R0": R0, "R_end": R_end,
            "newton_iters": iters, "gmres_iters": list(gmres)}


def test_ablation_examples():
    base = [rec(f) for f in range(2) for _ in range(3)]
    rep = M.ablation_report(base, base)
    assert rep.success_rate == 100.0 and rep.speedup == 1.0
    assert rep.rel_end == pytest.approx(1e-6) and rep.gmres_mean == 7 and rep.gmres_max == 7
    variant = [rec(0), rec(0), rec(0), rec(1), rec(1, converged=False), rec(1)]
    assert M.ablation_report(variant, base).success_rate == 50.0
    timed_base = [rec(0, t=5.0), rec(1, t=5.0)]
    timed_var = [rec(0, t=4.0), rec(1, t=4.0)]
    assert M.ablation_report(timed_var, timed_base).speedup == pytest.approx(1.25)
    none_conv = [rec(0, converged=False)]
    r = M.ablation_report(none_conv, base)
    assert r.rel_end is None and r.gmres_mean is None
    with pytest.raises(EmptySetError):
        M.ablation_report([], base)


def test_reports_are_pure():
    rng = np.random.default_rng(3)
    a, b = random_trace(rng), random_trace(rng)
    b.masses = a.masses.copy()
    one = json.dumps(M.drift_report(a, b).to_dict(), sort_keys=True)
    two = json.dumps(M.drift_report(a, b).to_dict(), sort_keys=True)
    assert one == two
    p1 = json.dumps(M.plausibility_report(a).to_dict(), sort_keys=True)
    assert p1 == json.dumps(M.plausibility_report(a).to_dict(), sort_keys=True)
