"""Newmark kinematics and the within-step nodal momentum residual.

Unknowns are the grid displacement increments ``du_I`` over one step. For a
free node the end-of-step acceleration and velocity follow from Newmark:

    a^{n+1} = (du - dt v^n - dt^2 (1/2 - beta) a^n) / (beta dt^2)
    v^{n+1} = v^n + dt ((1 - gamma) a^n + gamma a^{n+1})

and the residual is ``R_I = f_ext_I + f_int_I(du) - m_I a^{n+1}_I`` on free
nodes only. Dirichlet nodes get their increment directly from the prescribed
velocity; low-mass (inactive) nodes are held at zero.
"""

from __future__ import annotations

import numpy as np

from .constitutive import ConstitutiveModel, _det3, first_piola
from .core import GridState, NewmarkParams, ParticleSet
from .exceptions import InvertedElementError
from .shape import compute_stencils
from .transfers import GradientOperator, scatter


class ResidualEvaluationError(InvertedElementError):
    """Trial state is inadmissible (some trial det(F) <= 0)."""


def newmark_accel(du, v_n, a_n, dt: float, beta: float):
    du, v_n, a_n = (np.asarray(x, dtype=float) for x in (du, v_n, a_n))
    return (du - dt * v_n - dt * dt * (0.5 - beta) * a_n) / (beta * dt * dt)


def newmark_velocity(du, v_n, a_n, dt: float, beta: float, gamma: float):
    a_new = newmark_accel(du, v_n, a_n, dt, beta)
    return np.asarray(v_n, dtype=float) + dt * ((1.0 - gamma) * np.asarray(a_n, dtype=float) + gamma * a_new)


def kinematic_predictor(v_n, a_n, dt: float):
    return dt * np.asarray(v_n, dtype=float) + 0.5 * dt * dt * np.asarray(a_n, dtype=float)


def dirichlet_increment(v_tar, v_n, a_n, dt: float, beta: float, gamma: float):
    """Increment that makes the Newmark end velocity equal ``v_tar``."""
    v_n = np.asarray(v_n, dtype=float)
    a_n = np.asarray(a_n, dtype=float)
    S = gamma / (beta * dt)
    v_hist = (1.0 - gamma / beta) * v_n + dt * (1.0 - gamma - gamma * (0.5 - beta) / beta) * a_n
    return (np.asarray(v_tar, dtype=float) - v_hist) / S


class ImplicitSystem:
    """Residual, Jacobian-free operator inputs and preconditioner for one step.

    Built after :func:`impmpm.transfers.p2g` has filled ``grid``. Shape
    function gradients are frozen at the start-of-step particle positions.
    The public vector space is the flattened free-node increments
    (``3 * n_free`` entries, node-major).

    Residual evaluations work on active nodes only: stencil entries that
    touch inactive nodes point at one extra all-zero "sink" row, which is
    what holding inactive nodes at zero velocity means.
    """

    def __init__(self, particles: ParticleSet, grid: GridState, dt: float, newmark: NewmarkParams,
                 model: ConstitutiveModel | None, gravity, stencils=None,
                 geometric_stiffness: bool = False):
        if stencils is None:
            stencils = compute_stencils(particles.position, grid)
        self.ids, self.w, self.dw = stencils
        self.particles = particles
        self.grid = grid
        self.dt = float(dt)
        self.beta = newmark.beta
        self.gamma = newmark.gamma
        self.model = model
        self.num_nodes = grid.num_nodes
        self.free = grid.free_nodes
        self.dirichlet = grid.dirichlet_nodes
        self.mass = grid.node_mass
        self.v_n = grid.node_velocity
        self.a_n = grid.node_accel
        self.f_ext = self.mass[:, None] * np.asarray(gravity, dtype=float)
        self._eye = np.eye(3)

        self.base_du = np.zeros((self.num_nodes, 3))
        d = self.dirichlet
        self.base_du[d] = dirichlet_increment(
            grid.dirichlet_velocity[d], self.v_n[d], self.a_n[d], self.dt, self.beta, self.gamma
        )
        self.base_du[self.free] = kinematic_predictor(self.v_n[self.free], self.a_n[self.free], self.dt)
        self.K_diag = self._stiffness_diagonal(geometric_stiffness)

        # compact active-node space
        self.active = np.union1d(self.free, self.dirichlet)
        n_act = self.active.size
        loc = np.full(self.num_nodes, n_act)
        loc[self.active] = np.arange(n_act)
        self._free_loc = loc[self.free]
        self._dir_loc = loc[self.dirichlet]
        self.op = GradientOperator(loc[self.ids], self.dw, n_act + 1)
        f = self.free
        self._v_f, self._a_f, self._m_f = self.v_n[f], self.a_n[f], self.mass[f, None]
        self._f_ext_f = self.f_ext[f]
        self._v_loc = np.zeros((n_act + 1, 3))
        self._v_loc[self._dir_loc] = grid.dirichlet_velocity[d]

    @property
    def size(self) -> int:
        return 3 * self.free.size

    def predictor(self) -> np.ndarray:
        return self.base_du[self.free].ravel().copy()

    def embed(self, x: np.ndarray) -> np.ndarray:
        du = self.base_du.copy()
        du[self.free] = np.asarray(x).reshape(-1, 3)
        return du

    def end_velocity(self, du: np.ndarray) -> np.ndarray:
        v = np.zeros((self.num_nodes, 3))
        f = self.free
        v[f] = newmark_velocity(du[f], self.v_n[f], self.a_n[f], self.dt, self.beta, self.gamma)
        d = self.dirichlet
        v[d] = self.grid.dirichlet_velocity[d]
        return v

    def _trial_F_free(self, a_new: np.ndarray) -> np.ndarray:
        v = self._v_loc.copy()
        v[self._free_loc] = self._v_f + self.dt * ((1.0 - self.gamma) * self._a_f + self.gamma * a_new)
        grad_v = self.op.gradients(v)
        return (self._eye + self.dt * grad_v) @ self.particles.F

    def _accel_free(self, du_free: np.ndarray) -> np.ndarray:
        return newmark_accel(du_free, self._v_f, self._a_f, self.dt, self.beta)

    def trial_F(self, du: np.ndarray) -> np.ndarray:
        return self._trial_F_free(self._accel_free(du[self.free]))

    def _internal_forces_local(self, a_new: np.ndarray) -> np.ndarray:
        F = self._trial_F_free(a_new)
        J = _det3(F)
        if not np.all(J > 0):
            raise ResidualEvaluationError(f"trial det(F) <= 0 at {int(np.sum(~(J > 0)))} particle(s)")
        P = first_piola(self.model.kirchhoff(F), F)
        return self.op.internal_force(P, self.particles.volume0)

    def internal_forces(self, du: np.ndarray) -> np.ndarray:
        f_int = np.zeros((self.num_nodes, 3))
        if self.model is None:
            return f_int
        local = self._internal_forces_local(self._accel_free(du[self.free]))
        f_int[self.active] = local[:-1]
        return f_int

    def _residual_free(self, du_free: np.ndarray) -> np.ndarray:
        a_new = self._accel_free(du_free)
        R = self._f_ext_f - self._m_f * a_new
        if self.model is not None:
            R += self._internal_forces_local(a_new)[self._free_loc]
        return R

    def residual_full(self, du: np.ndarray) -> np.ndarray:
        return self._residual_free(np.asarray(du, dtype=float)[self.free])

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self._residual_free(np.asarray(x, dtype=float).reshape(-1, 3)).ravel()

    def _stiffness_diagonal(self, geometric: bool) -> np.ndarray:
        if self.model is None:
            return np.zeros(self.num_nodes)
        g2 = np.einsum("pkj,pkj->pk", self.dw, self.dw)
        K = scatter(self.ids, g2 * (self.particles.volume0 * self.model.stiffness_scale)[:, None], self.num_nodes)
        if geometric:
            tau = self.model.kirchhoff(self.particles.F)
            geo = np.einsum("pki,pij,pkj->pk", self.dw, tau, self.dw)
            K += scatter(self.ids, np.maximum(geo, 0.0) * self.particles.volume0[:, None], self.num_nodes)
        return K

    def preconditioner(self) -> np.ndarray:
        W = preconditioner_diag(self.grid, self.K_diag, self.dt, self.beta)
        return W.ravel()


def internal_forces(particles: ParticleSet, grid: GridState, du: np.ndarray, dt: float,
                    newmark: NewmarkParams, model: ConstitutiveModel, stencils=None):
    """Trial internal forces and the material stiffness diagonal.

    ``grid`` must already hold ``v^n``, ``a^n`` and node classes from P2G.
    Returns ``(f_int, K_diag)`` over all grid nodes.
    """
    system = ImplicitSystem(particles, grid, dt, newmark, model, (0.0, 0.0, 0.0), stencils)
    return system.internal_forces(np.asarray(du, dtype=float)), system.K_diag


def momentum_residual(du: np.ndarray, grid: GridState, particles: ParticleSet, gravity, dt: float,
                      newmark: NewmarkParams, model: ConstitutiveModel | None, stencils=None) -> np.ndarray:
    """Flattened residual over free nodes for a full-grid increment ``du``."""
    system = ImplicitSystem(particles, grid, dt, newmark, model, gravity, stencils)
    return system.residual_full(np.asarray(du, dtype=float)).ravel()


def preconditioner_diag(grid: GridState, K_diag: np.ndarray, dt: float, beta: float) -> np.ndarray:
    """``W_I = m_I / (beta dt^2) + K_I`` on free nodes, repeated per component."""
    free = grid.free_nodes
    W = grid.node_mass[free] / (beta * dt * dt) + np.asarray(K_diag)[free]
    if np.any(~(W > 0)):
        raise ArithmeticError("non-positive preconditioner entry on a free node")
    return np.repeat(W[:, None], 3, axis=1)
