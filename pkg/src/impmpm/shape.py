"""Cubic B-spline weights on the background grid.

The 1D kernel is node-centred with support radius 2h, so every particle
touches 4 nodes per axis (64 in 3D). Gradients are with respect to the
particle position, i.e. ``dw/dx_p`` evaluated at the current configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GridState
from .exceptions import DomainError

STENCIL = 4


def bspline1d(x):
    ax = np.abs(np.asarray(x, dtype=float))
    inner = 0.5 * ax**3 - ax**2 + 2.0 / 3.0
    outer = -ax**3 / 6.0 + ax**2 - 2.0 * ax + 4.0 / 3.0
    out = np.where(ax < 1.0, inner, np.where(ax < 2.0, outer, 0.0))
    return out if out.ndim else float(out)


def bspline1d_grad(x):
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    s = np.sign(x)
    inner = 1.5 * x * ax - 2.0 * x
    outer = s * (-0.5 * ax**2 + 2.0 * ax - 2.0)
    out = np.where(ax < 1.0, inner, np.where(ax < 2.0, outer, 0.0))
    return out if out.ndim else float(out)


@dataclass
class Stencil:
    node_indices: np.ndarray  # (64,)
    weights: np.ndarray  # (64,)
    weight_gradients: np.ndarray  # (64, 3), units 1/m


def _check_domain(positions: np.ndarray, grid_lim: float) -> None:
    if positions.size and (
        not np.all(np.isfinite(positions)) or positions.min() < 0.0 or positions.max() > grid_lim
    ):
        bad = np.flatnonzero(~np.all((positions >= 0.0) & (positions <= grid_lim), axis=1))
        raise DomainError(
            f"{bad.size} particle(s) outside [0, {grid_lim}]^3, first at {positions[bad[0]]}"
        )


def compute_stencils(positions: np.ndarray, grid: GridState):
    """Vectorised stencils for all particles.

    Returns ``(ids, w, dw)`` with shapes ``(N, 64)``, ``(N, 64)`` and
    ``(N, 64, 3)``. Node order is x-major, matching :meth:`GridState.node_id`.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    _check_domain(positions, grid.grid_lim)
    h = grid.h
    xi = positions / h
    base = np.floor(xi).astype(np.int64) - 1  # (N, 3)
    offs = np.arange(STENCIL)
    lattice = base[:, :, None] + offs  # (N, 3, 4)
    r = xi[:, :, None] - lattice  # normalised particle - node distance
    n1 = bspline1d(r)
    d1 = bspline1d_grad(r) / h
    wx, wy, wz = n1[:, 0], n1[:, 1], n1[:, 2]
    dx, dy, dz = d1[:, 0], d1[:, 1], d1[:, 2]
    w = (wx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :]).reshape(-1, 64)
    gx = dx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :]
    gy = wx[:, :, None, None] * dy[:, None, :, None] * wz[:, None, None, :]
    gz = wx[:, :, None, None] * wy[:, None, :, None] * dz[:, None, None, :]
    dw = np.stack([gx.reshape(-1, 64), gy.reshape(-1, 64), gz.reshape(-1, 64)], axis=-1)
    ix, iy, iz = lattice[:, 0], lattice[:, 1], lattice[:, 2]
    ids = grid.node_id(ix[:, :, None, None], iy[:, None, :, None], iz[:, None, None, :]).reshape(-1, 64)
    return ids, w, dw


def stencil_for(particle_position, grid: GridState) -> Stencil:
    ids, w, dw = compute_stencils(np.asarray(particle_position, dtype=float)[None, :], grid)
    return Stencil(ids[0], w[0], dw[0])
