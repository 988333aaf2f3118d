"""Internal particle filling of hollow point sets.

The surface points are voxelized; every empty voxel then casts six axis
rays (+-x, +-y, +-z). A ray votes "inside" when it enters an odd number of
occupied runs, and the voxel is interior when at least 4 of the 6 rays
agree. Counting runs instead of occupied voxels keeps thick shells from
flipping the parity.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.spatial import cKDTree

from .core import MaterialParams, ParticleSet
from .exceptions import DomainError, ParameterError

logger = logging.getLogger(__name__)

MIN_VOTES = 4


def voxel_size(grid_lim: float, resolution: int) -> float:
    return grid_lim / resolution


def voxelize(points: np.ndarray, grid_lim: float, resolution: int) -> np.ndarray:
    """Boolean ``(res, res, res)`` lattice, true where a voxel holds at least one point."""
    if resolution < 1:
        raise ParameterError("resolution must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    occ = np.zeros((resolution,) * 3, dtype=bool)
    if pts.shape[0] == 0:
        return occ
    if pts.min() < 0.0 or pts.max() > grid_lim:
        raise DomainError(f"points leave [0, {grid_lim}]^3")
    idx = np.minimum(np.floor(pts / voxel_size(grid_lim, resolution)).astype(int), resolution - 1)
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return occ


def ray_votes(occupancy: np.ndarray) -> np.ndarray:
    """Number of the six axis rays from each voxel that cross an odd number of runs."""
    occ = np.asarray(occupancy, dtype=bool)
    votes = np.zeros(occ.shape, dtype=np.int8)
    for axis in range(3):
        prev = np.zeros_like(occ)
        sl_dst = [slice(None)] * 3
        sl_src = [slice(None)] * 3
        sl_dst[axis] = slice(1, None)
        sl_src[axis] = slice(None, -1)
        prev[tuple(sl_dst)] = occ[tuple(sl_src)]
        starts = (occ & ~prev).astype(np.int32)
        before = np.cumsum(starts, axis=axis)  # runs starting at or before this voxel
        total = np.take(before, [-1], axis=axis)
        # for an empty voxel no run starts at it, so "at or before" means "before"
        votes += (before % 2).astype(np.int8)
        votes += ((total - before) % 2).astype(np.int8)
    return votes


def classify_interior(occupancy: np.ndarray) -> np.ndarray:
    occ = np.asarray(occupancy, dtype=bool)
    return ~occ & (ray_votes(occ) >= MIN_VOTES)


def voxel_centers(mask: np.ndarray, grid_lim: float) -> np.ndarray:
    h = voxel_size(grid_lim, mask.shape[0])
    return (np.argwhere(mask) + 0.5) * h


def fill_particles(interior: np.ndarray, source: ParticleSet | np.ndarray, material: MaterialParams,
                   grid_lim: float) -> tuple[ParticleSet, np.ndarray]:
    """One at-rest particle per interior voxel center.

    Returns the filled set (``filled`` flags all true) and, for each filled
    particle, the index of its nearest source particle.
    """
    pts = voxel_centers(np.asarray(interior, dtype=bool), grid_lim)
    h = voxel_size(grid_lim, interior.shape[0])
    filled = ParticleSet.at_rest(pts, h**3, material.density)
    filled.filled = np.ones(filled.count, dtype=bool)
    src = source.position if isinstance(source, ParticleSet) else np.asarray(source, dtype=float).reshape(-1, 3)
    if filled.count == 0:
        logger.warning("no interior voxels found; nothing to fill")
        return filled, np.zeros(0, dtype=int)
    if src.shape[0] == 0:
        return filled, np.full(filled.count, -1)
    _, nearest = cKDTree(src).query(pts)
    return filled, np.asarray(nearest, dtype=int)


def fill_point_set(points: np.ndarray, grid_lim: float, resolution: int,
                   material: MaterialParams | None = None) -> ParticleSet:
    """Voxelize ``points``, classify the interior, and return the filled particles."""
    material = material or MaterialParams()
    occ = voxelize(points, grid_lim, resolution)
    filled, _ = fill_particles(classify_interior(occ), points, material, grid_lim)
    return filled
