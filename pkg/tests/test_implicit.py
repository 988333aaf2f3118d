import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import neo_hookean, random_particles, small_grid
from impmpm.constitutive import first_piola, kirchhoff_neo_hookean
from impmpm.core import BoundaryCondition, NewmarkParams, ParticleSet
from impmpm.implicit import (
    ImplicitSystem,
    dirichlet_increment,
    internal_forces,
    kinematic_predictor,
    momentum_residual,
    newmark_accel,
    newmark_velocity,
    preconditioner_diag,
)
from impmpm.shape import bspline1d, bspline1d_grad
from impmpm.transfers import p2g

NM = NewmarkParams()
vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)


def test_newmark_accel_examples():
    v, a, dt = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.0, -9.8]), 0.05
    assert np.allclose(newmark_accel(kinematic_predictor(v, a, dt), v, a, dt, 0.25), a)
    assert np.allclose(newmark_accel(dt * v, v, np.zeros(3), dt, 0.25), 0.0)
    assert np.allclose(newmark_accel([0.01, 0, 0], np.zeros(3), np.zeros(3), 0.1, 0.25), [4.0, 0, 0])


def test_newmark_velocity_examples():
    g = np.array([0.0, 0.0, -10.0])
    v = np.array([0.2, 0.0, 1.0])
    dt = 0.1
    du = kinematic_predictor(v, g, dt)
    assert np.allclose(newmark_velocity(du, v, g, dt, 0.25, 0.5), v + dt * g)
    assert np.allclose(newmark_velocity(np.ones(3), v, g, dt, 0.25, 0.0), v + dt * g)
    assert np.allclose(newmark_velocity([0.01, 0, 0], np.zeros(3), np.zeros(3), 0.1, 0.25, 0.5), [0.2, 0, 0])


@settings(max_examples=100, deadline=None)
@given(vec, vec, vec, st.floats(1e-3, 1.0))
def test_dirichlet_increment_trapezoid(v_tar, v_n, a_n, dt):
    du = dirichlet_increment(v_tar, v_n, a_n, dt, 0.25, 0.5)
    assert np.allclose(du, dt * (v_tar + v_n) / 2, atol=1e-12)
    # and it realises the prescribed end velocity through the Newmark update
    assert np.allclose(newmark_velocity(du, v_n, a_n, dt, 0.25, 0.5), v_tar, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(vec, vec, vec, st.floats(1e-3, 1.0), st.floats(0.05, 0.5), st.floats(0.1, 1.0))
def test_dirichlet_increment_general_newmark(v_tar, v_n, a_n, dt, beta, gamma):
    du = dirichlet_increment(v_tar, v_n, a_n, dt, beta, gamma)
    assert np.allclose(newmark_velocity(du, v_n, a_n, dt, beta, gamma), v_tar, atol=1e-7)


def test_dirichlet_increment_trivial_cases():
    v = np.array([1.0, 2.0, 3.0])
    assert np.allclose(dirichlet_increment(v, v, np.zeros(3), 0.1, 0.25, 0.5), 0.1 * v)
    assert np.allclose(dirichlet_increment(np.zeros(3), np.zeros(3), np.zeros(3), 0.1, 0.25, 0.5), 0)


@pytest.mark.parametrize("beta", [0.1, 0.25, 0.5])
def test_gamma_one_reduces_to_forward_euler_velocity(beta):
    v, a, dt = np.array([1.0, 0.0, -1.0]), np.array([0.0, 2.0, -9.8]), 0.02
    du = kinematic_predictor(v, a, dt)
    assert np.allclose(newmark_velocity(du, v, a, dt, beta, 1.0), v + dt * a)


def _system(ps, g, model, gravity=(0, 0, 0), dt=1e-2, bcs=()):
    p2g(ps, g, gravity, bcs, model)
    return ImplicitSystem(ps, g, dt, NM, model, gravity)


def test_stress_free_zero_increment_has_no_internal_force():
    rng = np.random.default_rng(0)
    g = small_grid(8)
    ps = random_particles(30, rng)
    ps.velocity[:] = 0
    p2g(ps, g, (0, 0, 0), model=neo_hookean())
    f, K = internal_forces(ps, g, np.zeros((g.num_nodes, 3)), 1e-2, NM, neo_hookean())
    assert np.allclose(f, 0.0, atol=1e-14)
    assert np.all(K >= 0)


def test_uniform_increment_leaves_internal_force_unchanged():
    rng = np.random.default_rng(1)
    g = small_grid(8)
    ps = random_particles(30, rng, stretch=0.05)
    model = neo_hookean()
    sys_ = _system(ps, g, model)
    g.node_velocity[:] = 0.0
    g.node_accel[:] = 0.0
    sys_ = ImplicitSystem(ps, g, 1e-2, NM, model, (0, 0, 0))
    act = g.active_nodes
    du0 = np.zeros((g.num_nodes, 3))
    du1 = du0.copy()
    du1[act] = [1e-3, -2e-3, 5e-4]
    f0, f1 = sys_.internal_forces(du0), sys_.internal_forces(du1)
    assert np.allclose(f1, f0, rtol=1e-9, atol=1e-9 * np.abs(f0).max())


def test_single_particle_internal_force_brute_force():
    g = small_grid(8)
    x = np.array([0.47, 0.52, 0.55])
    ps = ParticleSet.at_rest(x[None], 2e-3, 1000.0)
    ps.F[0] = np.array([[1.05, 0.02, 0.0], [0.0, 0.97, 0.01], [0.03, 0.0, 1.02]])
    model = neo_hookean(youngs=5e3)
    dt = 1e-2
    sys_ = _system(ps, g, model, dt=dt)
    rng = np.random.default_rng(4)
    du = np.zeros((g.num_nodes, 3))
    act = g.active_nodes
    coords = g.node_coords(act)
    du[act] = 1e-3 * coords @ np.array([[0.5, 0.1, 0.0], [0.0, -0.3, 0.2], [0.1, 0.0, 0.4]]).T
    du[act] += 1e-4 * rng.normal(size=(act.size, 3))
    f = sys_.internal_forces(du)
    # hand-rolled evaluation over the same active nodes
    v_end = newmark_velocity(du[act], g.node_velocity[act], g.node_accel[act], dt, 0.25, 0.5)
    r = (coords - x) / g.h
    N = bspline1d(r)
    dN = bspline1d_grad(r) / g.h
    grads = np.stack([
        dN[:, 0] * N[:, 1] * N[:, 2],
        N[:, 0] * dN[:, 1] * N[:, 2],
        N[:, 0] * N[:, 1] * dN[:, 2],
    ], axis=1) * -1.0  # d/dx_p of N((x_I - x_p)/h)
    grad_v = sum(np.outer(v_end[i], grads[i]) for i in range(act.size))
    F = (np.eye(3) + dt * grad_v) @ ps.F[0]
    P = first_piola(kirchhoff_neo_hookean(F, model.lam, model.mu), F)
    expect = np.array([-ps.volume0[0] * P @ grads[i] for i in range(act.size)])
    assert np.allclose(f[act], expect, rtol=1e-10, atol=1e-14)


def test_free_fall_residual_vanishes_at_predictor():
    rng = np.random.default_rng(2)
    g = small_grid(8)
    ps = random_particles(20, rng)
    gravity = (0.0, 0.0, -9.8)
    sys_ = _system(ps, g, None, gravity=gravity)
    R = sys_.residual(sys_.predictor())
    assert np.max(np.abs(R)) <= 1e-12 * np.max(g.node_mass) * 9.8
    du = sys_.embed(sys_.predictor())
    R2 = momentum_residual(du, g, ps, gravity, 1e-2, NM, None)
    assert np.array_equal(R, R2)


def test_zero_increment_residual_closed_form():
    rng = np.random.default_rng(3)
    g = small_grid(8)
    ps = random_particles(20, rng)
    dt = 1e-2
    sys_ = _system(ps, g, None, dt=dt)
    R = sys_.residual(np.zeros(sys_.size)).reshape(-1, 3)
    f = g.free_nodes
    # a^{n+1}(0) = -v_n / (beta dt) with a_n = 0
    expect = g.node_mass[f, None] * g.node_velocity[f] / (0.25 * dt)
    assert np.allclose(R, expect, rtol=1e-12, atol=1e-12)
    assert R.shape[0] == f.size < g.num_nodes


def test_translation_property():
    rng = np.random.default_rng(6)
    g = small_grid(8)
    ps = random_particles(30, rng, stretch=0.03)
    dt = 2e-2
    model = neo_hookean()
    sys_ = _system(ps, g, model, dt=dt, gravity=(0, 0, -9.8))
    x = sys_.predictor()
    c = np.array([2e-4, -1e-4, 3e-4])
    R0 = sys_.residual(x).reshape(-1, 3)
    R1 = sys_.residual((x.reshape(-1, 3) + c).ravel()).reshape(-1, 3)
    expect = -g.node_mass[g.free_nodes, None] * c / (0.25 * dt * dt)
    assert np.allclose(R1 - R0, expect, rtol=1e-8, atol=1e-9 * np.abs(expect).max())


def test_dirichlet_entries_follow_prescribed_velocity():
    rng = np.random.default_rng(8)
    g = small_grid(10)
    ps = random_particles(40, rng, lo=0.05, hi=0.5)
    floor = BoundaryCondition("dirichlet_region", (-1, -1, -1), (2, 2, 0.2), velocity=(0.0, 0.0, 0.3))
    dt = 1e-2
    sys_ = _system(ps, g, neo_hookean(), dt=dt, bcs=[floor])
    d = g.dirichlet_nodes
    assert d.size > 0
    du = sys_.embed(sys_.predictor())
    v = newmark_velocity(du[d], g.node_velocity[d], g.node_accel[d], dt, 0.25, 0.5)
    assert np.allclose(v, (0.0, 0.0, 0.3), atol=1e-12)
    assert np.allclose(sys_.end_velocity(du)[d], (0.0, 0.0, 0.3))


def test_preconditioner_values():
    g = small_grid(6)
    ps = ParticleSet.at_rest(np.array([[0.5, 0.5, 0.5]]), 1e-3, 1000.0)
    p2g(ps, g, (0, 0, 0))
    f = g.free_nodes
    g.node_mass[f] = 1.0
    W = preconditioner_diag(g, np.zeros(g.num_nodes), 0.1, 0.25)
    assert W.shape == (f.size, 3)
    assert np.allclose(W, 400.0)
    K = np.zeros(g.num_nodes)
    K[f] = 3.0
    assert np.allclose(preconditioner_diag(g, K, 0.1, 0.25), 403.0)
    g.node_mass[f[0]] = 0.0
    with pytest.raises(ArithmeticError):
        preconditioner_diag(g, np.zeros(g.num_nodes), 0.1, 0.25)


def test_stiffness_diagonal_brute_force():
    rng = np.random.default_rng(9)
    g = small_grid(8)
    ps = random_particles(10, rng)
    model = neo_hookean()
    sys_ = _system(ps, g, model)
    K = np.zeros(g.num_nodes)
    for p in range(ps.count):
        for k in range(64):
            K[sys_.ids[p, k]] += ps.volume0[p] * model.stiffness_scale * sys_.dw[p, k] @ sys_.dw[p, k]
    assert np.allclose(sys_.K_diag, K, rtol=1e-12)
    assert np.all(sys_.preconditioner() > 0)
