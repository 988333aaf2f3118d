"""Particle/grid transfers (PIC).

Scatter uses ``np.bincount``, which sums contributions in particle index
order, so grid fields are bit-stable across runs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import sparse

from .constitutive import ConstitutiveModel, first_piola, update_deformation_gradient
from .core import ACTIVE_MASS_RTOL, BoundaryCondition, GridState, NodeClass, ParticleSet
from .shape import compute_stencils


def scatter(ids: np.ndarray, values: np.ndarray, num_nodes: int) -> np.ndarray:
    """Sum per-(particle, node) ``values`` onto nodes.

    ``values`` has shape ``(N, 64)`` or ``(N, 64, 3)``.
    """
    flat = ids.ravel()
    if values.ndim == 2:
        return np.bincount(flat, weights=values.ravel(), minlength=num_nodes)
    c = values.shape[-1]
    # one bincount over (node, component) pairs keeps the per-node summation order
    keys = (flat[:, None] * c + np.arange(c)).ravel()
    out = np.bincount(keys, weights=values.reshape(-1), minlength=num_nodes * c)
    return out.reshape(num_nodes, c)


def field_gradients(field: np.ndarray, ids: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """``grad f(x_p) = sum_I f_I (x) grad w_Ip`` for every particle, shape (N, 3, 3)."""
    return np.matmul(field[ids].transpose(0, 2, 1), dw)


def grid_incremental_gradient(field: np.ndarray, particle_position, grid: GridState) -> np.ndarray:
    ids, _, dw = compute_stencils(np.asarray(particle_position, dtype=float)[None, :], grid)
    return field_gradients(np.asarray(field), ids, dw)[0]


def internal_force_from_stress(P: np.ndarray, volume0: np.ndarray, ids: np.ndarray,
                               dw: np.ndarray, num_nodes: int) -> np.ndarray:
    """``f_I = -sum_p V0_p P_p grad N_I(x_p)``."""
    contrib = -np.matmul(dw, (P * volume0[:, None, None]).transpose(0, 2, 1))
    return scatter(ids, contrib, num_nodes)


class GradientOperator:
    """Sparse form of the frozen stencil gradients for one step.

    ``G[3p + j, I] = d w_Ip / d x_j``. Velocity gradients at particles are
    ``G @ v`` and internal forces are ``-G.T @ (V0 P)``; both reuse the same
    matrix across every residual evaluation of a Newton solve.
    """

    def __init__(self, ids: np.ndarray, dw: np.ndarray, num_nodes: int):
        n = ids.shape[0]
        rows = (np.arange(n)[:, None, None] * 3 + np.arange(3)[None, None, :]).repeat(ids.shape[1], axis=1)
        cols = np.broadcast_to(ids[:, :, None], rows.shape)
        self.num_particles = n
        self.G = sparse.csr_matrix((dw.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * n, num_nodes))
        self.GT = self.G.T.tocsr()

    def gradients(self, field: np.ndarray) -> np.ndarray:
        """Per-particle ``grad f`` with ``[p, i, j] = d f_i / d x_j``."""
        return (self.G @ field).reshape(self.num_particles, 3, 3).transpose(0, 2, 1)

    def internal_force(self, P: np.ndarray, volume0: np.ndarray) -> np.ndarray:
        X = (P * volume0[:, None, None]).transpose(0, 2, 1).reshape(-1, 3)
        return -(self.GT @ X)


def classify_nodes(grid: GridState, bcs: Sequence[BoundaryCondition] = ()) -> None:
    m = grid.node_mass
    mmax = m.max() if m.size else 0.0
    active = m > ACTIVE_MASS_RTOL * mmax if mmax > 0 else np.zeros_like(m, dtype=bool)
    grid.node_class[:] = np.where(active, NodeClass.FREE, NodeClass.INACTIVE)
    grid.dirichlet_velocity.fill(0.0)
    regions = [bc for bc in bcs if bc.kind == "dirichlet_region"]
    if not regions:
        return
    act = np.flatnonzero(active)
    coords = grid.node_coords(act)
    for bc in regions:
        hit = act[bc.contains(coords)]
        grid.node_class[hit] = NodeClass.DIRICHLET
        grid.dirichlet_velocity[hit] = bc.velocity


def p2g(particles: ParticleSet, grid: GridState, gravity, bcs: Sequence[BoundaryCondition] = (),
        model: ConstitutiveModel | None = None, stencils=None) -> GridState:
    """Scatter mass and momentum, classify nodes, and set start-of-step accelerations.

    The acceleration ``a_I^n = (f_int(F^n) + m_I g) / m_I`` uses the current
    particle stress; ``model=None`` treats the material as stress-free.
    """
    if stencils is None:
        stencils = compute_stencils(particles.position, grid)
    ids, w, dw = stencils
    n = grid.num_nodes
    grid.reset()
    mw = w * particles.mass[:, None]
    grid.node_mass[:] = scatter(ids, mw, n)
    momentum = scatter(ids, mw[:, :, None] * particles.velocity[:, None, :], n)
    classify_nodes(grid, bcs)
    act = np.flatnonzero(grid.node_class != NodeClass.INACTIVE)
    m = grid.node_mass[act, None]
    grid.node_velocity[act] = momentum[act] / m
    force = m * np.asarray(gravity, dtype=float)
    if model is not None:
        P = first_piola(model.kirchhoff(particles.F), particles.F)
        force += internal_force_from_stress(P, particles.volume0, ids, dw, n)[act]
    grid.node_accel[act] = force / m
    return grid


def nodal_momentum(grid: GridState) -> np.ndarray:
    return (grid.node_mass[:, None] * grid.node_velocity).sum(axis=0)


def g2p_advect(grid_velocity: np.ndarray, particles: ParticleSet, dt: float, grid: GridState,
               stencils=None, displacement: np.ndarray | None = None) -> ParticleSet:
    """Gather end-of-step grid velocities back to particles.

    Positions advance by ``dt * v_p`` unless a nodal ``displacement`` field is
    given, in which case ``x_p += sum_I w_Ip du_I`` (the Newmark-consistent
    update used by the implicit stepper).
    """
    if stencils is None:
        stencils = compute_stencils(particles.position, grid)
    ids, w, dw = stencils
    out = particles.copy()
    out.velocity = np.einsum("pk,pki->pi", w, grid_velocity[ids])
    if displacement is None:
        out.position = particles.position + dt * out.velocity
    else:
        out.position = particles.position + np.einsum("pk,pki->pi", w, displacement[ids])
    grad_v = field_gradients(grid_velocity, ids, dw)
    out.F = update_deformation_gradient(particles.F, grad_v, dt)
    return out
