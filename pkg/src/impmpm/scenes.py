"""Preset desk-scale scenes."""

from __future__ import annotations

from .core import (
    BoundaryCondition,
    MaterialParams,
    ParticleSource,
    SimConfig,
    SolverParams,
    TimeConfig,
)

FLOOR_TOP = 0.1


def floor_bc(top: float = FLOOR_TOP, grid_lim: float = 1.0) -> BoundaryCondition:
    """Zero-velocity Dirichlet slab covering every node with ``z <= top``."""
    return BoundaryCondition(
        kind="dirichlet_region",
        region_min=(-grid_lim, -grid_lim, -grid_lim),
        region_max=(2 * grid_lim, 2 * grid_lim, top),
    )


def soft_block(youngs: float = 5e4, frame_num: int = 20, substep_dt: float = 2e-3,
               frame_dt: float = 4e-2, spacing: float = 0.025, resolution: int = 20,
               solver: SolverParams | None = None, name: str = "soft_block") -> SimConfig:
    """An elastic block released above a Dirichlet floor under gravity."""
    return SimConfig(
        time=TimeConfig(substep_dt=substep_dt, frame_dt=frame_dt, frame_num=frame_num),
        grid_lim=1.0,
        resolution=resolution,
        material=MaterialParams(density=1000.0, youngs=youngs, poisson=0.3),
        solver=solver or SolverParams(),
        gravity=(0.0, 0.0, -9.8),
        boundary_conditions=(floor_bc(),),
        particles=ParticleSource(kind="box", lower=(0.375, 0.375, 0.2), upper=(0.625, 0.625, 0.45),
                                 spacing=spacing),
        name=name,
    )


def stiff_block(frame_num: int = 8) -> SimConfig:
    """The soft block with a 40x stiffer material, for solver ablations at large k."""
    return soft_block(youngs=2e6, frame_num=frame_num, name="stiff_block")


def impulse_block(frame_num: int = 4, substep_dt: float = 1e-3, frame_dt: float = 2e-2,
                  force=(-0.18, 0.0, 0.0), num_dt: int = 1, start_time: float = 0.0,
                  name: str = "impulse_block") -> SimConfig:
    """A gravity-free block whose upper half receives a lateral impulse."""
    return SimConfig(
        time=TimeConfig(substep_dt=substep_dt, frame_dt=frame_dt, frame_num=frame_num),
        material=MaterialParams(density=1000.0, youngs=5e4, poisson=0.3),
        gravity=(0.0, 0.0, 0.0),
        boundary_conditions=(
            BoundaryCondition(kind="particle_impulse", region_min=(0.4, 0.4, 0.5), region_max=(0.6, 0.6, 0.6),
                              force=tuple(force), num_dt=num_dt, start_time=start_time),
        ),
        particles=ParticleSource(kind="box", lower=(0.4, 0.4, 0.4), upper=(0.6, 0.6, 0.6), spacing=0.025),
        name=name,
    )


def free_fall(frame_num: int = 50, substep_dt: float = 1e-3, frame_dt: float = 4e-3) -> SimConfig:
    """A single particle falling from rest with no floor."""
    return SimConfig(
        time=TimeConfig(substep_dt=substep_dt, frame_dt=frame_dt, frame_num=frame_num),
        particles=ParticleSource(kind="box", lower=(0.5, 0.5, 0.9), upper=(0.525, 0.525, 0.925), spacing=0.025),
        name="free_fall",
    )


SCENES = {
    "soft_block": soft_block,
    "stiff_block": stiff_block,
    "impulse_block": impulse_block,
    "free_fall": free_fall,
}
