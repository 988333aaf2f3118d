"""Implicit (Newmark + Newton-GMRES) and explicit MPM with trace-based evaluation."""

from .core import (
    BoundaryCondition,
    GridState,
    MaterialParams,
    NewmarkParams,
    ParticleSet,
    ParticleSource,
    SimConfig,
    SolverParams,
    TimeConfig,
    build_grid,
    lame_from_young_poisson,
    load_config,
    save_config,
    seed_particles_box,
)
from .stepper import StepSchedule, run_simulation
from .trace_io import Trace, read_trace, write_trace

__version__ = "0.1.0"

__all__ = [
    "BoundaryCondition",
    "GridState",
    "MaterialParams",
    "NewmarkParams",
    "ParticleSet",
    "ParticleSource",
    "SimConfig",
    "SolverParams",
    "StepSchedule",
    "TimeConfig",
    "Trace",
    "build_grid",
    "lame_from_young_poisson",
    "load_config",
    "read_trace",
    "run_simulation",
    "save_config",
    "seed_particles_box",
    "write_trace",
]
