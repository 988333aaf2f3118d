"""Frame/substep orchestration for explicit and implicit MPM.

A run advances ``frame_num`` frames of ``steps_per_frame`` substeps each,
where ``steps_per_frame = round(frame_dt / substep_dt)`` and
``substep_dt = k * base_substep_dt`` for time-step multiplier ``k``. Particle
positions are clipped into ``[eps, grid_lim - eps]`` after every substep;
the per-frame clamp mask is the union over that frame's substeps.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .constitutive import ConstitutiveModel, determinant, model_for
from .core import (
    BoundaryCondition,
    GridState,
    NewmarkParams,
    NodeClass,
    ParticleSet,
    SimConfig,
    SolverParams,
    TimeConfig,
    build_grid,
    seed_particles_box,
    seed_particles_sphere,
)
from .exceptions import DomainError, InvertedElementError, ParameterError, SimulationAborted
from .implicit import ImplicitSystem, dirichlet_increment, newmark_accel, newmark_velocity
from .shape import compute_stencils
from .solver import NewtonReport, newton_solve
from .trace_io import Trace, read_points
from .transfers import g2p_advect, p2g

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepSchedule:
    substep_dt: float
    frame_dt: float
    frame_num: int
    steps_per_frame: int
    multiplier: int = 1

    @classmethod
    def from_time(cls, time_cfg: TimeConfig, k: int | None = None) -> "StepSchedule":
        k = time_cfg.dt_multiplier if k is None else int(k)
        if k < 1:
            raise ParameterError("time-step multiplier must be >= 1")
        dt = k * time_cfg.substep_dt
        spf = max(1, int(round(time_cfg.frame_dt / dt)))
        return cls(dt, time_cfg.frame_dt, time_cfg.frame_num, spf, k)

    @property
    def effective_frame_dt(self) -> float:
        return self.steps_per_frame * self.substep_dt

    @property
    def total_substeps(self) -> int:
        return self.steps_per_frame * self.frame_num


def make_particles(config: SimConfig) -> ParticleSet:
    src = config.particles
    mat = config.material
    if src.kind == "box":
        ps = seed_particles_box(src.lower, src.upper, src.spacing, mat)
    elif src.kind == "sphere":
        ps = seed_particles_sphere(src.center, src.radius, src.spacing, mat)
    else:
        pts = read_points(src.path)
        ps = ParticleSet.at_rest(pts, src.spacing**3, mat.density)
    ps.velocity[:] = src.velocity
    lim = config.grid_lim
    if np.any(ps.position < 0) or np.any(ps.position > lim):
        raise DomainError(f"seeded particles leave [0, {lim}]^3")
    return ps


def clamp_particles(particles: ParticleSet, grid_lim: float, eps: float = 1e-6) -> np.ndarray:
    """Clip positions into ``[eps, grid_lim - eps]`` in place; return the clipped mask."""
    x = particles.position
    lo, hi = eps, grid_lim - eps
    mask = np.any((x < lo) | (x > hi), axis=1)
    if mask.any():
        np.clip(x, lo, hi, out=x)
    return mask


def impulse_substeps(bc: BoundaryCondition, dt: float) -> range:
    first = max(0, math.ceil(bc.start_time / dt - 1e-9))
    return range(first, first + bc.num_dt)


def scaled_impulse_force(bc: BoundaryCondition, k: int) -> np.ndarray:
    return np.asarray(bc.force, dtype=float) / k


def apply_impulse(particles: ParticleSet, bc: BoundaryCondition, substep_index: int, dt: float,
                  k: int = 1) -> np.ndarray:
    """Kick in-region particles if ``substep_index`` falls in the impulse window.

    The configured force is divided by ``k`` and applied over one substep of
    length ``dt``, shared over the in-region mass, so every particle gets the
    same velocity change. Returns the momentum imparted (zeros when idle).
    """
    if bc.kind != "particle_impulse":
        raise ParameterError("apply_impulse needs a particle_impulse boundary condition")
    if substep_index not in impulse_substeps(bc, dt):
        return np.zeros(3)
    inside = bc.contains(particles.position)
    if not inside.any():
        logger.warning("impulse region %s..%s contains no particles", bc.region_min, bc.region_max)
        return np.zeros(3)
    region_mass = particles.mass[inside].sum()
    dv = scaled_impulse_force(bc, k) * dt / region_mass
    particles.velocity[inside] += dv
    return (particles.mass[inside, None] * dv).sum(axis=0)


def _check_state(particles: ParticleSet, where: str) -> None:
    if not (np.all(np.isfinite(particles.position)) and np.all(np.isfinite(particles.velocity))
            and np.all(np.isfinite(particles.F))):
        raise SimulationAborted(f"non-finite particle state after {where}")
    J = determinant(particles.F)
    if not np.all(J > 0):
        raise SimulationAborted(f"inverted deformation gradient after {where} ({int(np.sum(~(J > 0)))} particles)")


def explicit_substep(particles: ParticleSet, grid: GridState, dt: float, config: SimConfig,
                     model: ConstitutiveModel | None = None) -> tuple[ParticleSet, np.ndarray]:
    model = model_for(config.material) if model is None else model
    stencils = compute_stencils(particles.position, grid)
    p2g(particles, grid, config.gravity, config.boundary_conditions, model, stencils)
    v_new = np.zeros_like(grid.node_velocity)
    active = grid.node_class != NodeClass.INACTIVE
    v_new[active] = grid.node_velocity[active] + dt * grid.node_accel[active]
    d = grid.node_class == NodeClass.DIRICHLET
    v_new[d] = grid.dirichlet_velocity[d]
    out = g2p_advect(v_new, particles, dt, grid, stencils)
    _check_state(out, "explicit substep")
    mask = clamp_particles(out, config.grid_lim, config.clamp_margin)
    return out, mask


def _admissible_start(system: ImplicitSystem) -> np.ndarray:
    """Predictor, or a fallback increment whose trial F is admissible."""
    x0 = system.predictor()
    f = system.free
    candidates = [
        x0,
        # end velocity equal to v^n, then equal to zero (trial F = F^n)
        dirichlet_increment(system.v_n[f], system.v_n[f], system.a_n[f], system.dt, system.beta, system.gamma).ravel(),
        dirichlet_increment(np.zeros_like(system.v_n[f]), system.v_n[f], system.a_n[f], system.dt,
                            system.beta, system.gamma).ravel(),
    ]
    for cand in candidates:
        try:
            system.residual(cand)
            return cand
        except InvertedElementError:
            continue
    return candidates[-1]


def implicit_substep(particles: ParticleSet, grid: GridState, dt: float, config: SimConfig,
                     model: ConstitutiveModel | None = None,
                     solver: SolverParams | None = None) -> tuple[ParticleSet, NewtonReport, np.ndarray]:
    model = model_for(config.material) if model is None else model
    solver = config.solver if solver is None else solver
    stencils = compute_stencils(particles.position, grid)
    p2g(particles, grid, config.gravity, config.boundary_conditions, model, stencils)
    system = ImplicitSystem(particles, grid, dt, config.newmark, model, config.gravity, stencils,
                            geometric_stiffness=solver.geometric_stiffness)
    x0 = _admissible_start(system)
    W = system.preconditioner()
    x, report = newton_solve(system.residual, x0, W, solver)
    du = system.embed(x)
    grid.delta_u[:] = du
    v_new = system.end_velocity(du)
    out = g2p_advect(v_new, particles, dt, grid, stencils, displacement=du)
    _check_state(out, "implicit substep")
    mask = clamp_particles(out, config.grid_lim, config.clamp_margin)
    return out, report, mask


def _telemetry_record(substep: int, frame: int, report: NewtonReport) -> dict:
    return {
        "substep": substep,
        "frame": frame,
        "converged": bool(report.converged),
        "newton_iters": int(report.newton_iters),
        "gmres_iters": [int(i) for i in report.gmres_iters_per_newton],
        "R0": float(report.initial_residual_norm),
        "R_end": float(report.final_residual_norm),
        "wall_time": float(report.wall_time),
        "fallback_used": bool(report.fallback_used),
        "stagnated": bool(report.stagnated),
        "failure": report.failure,
        "tolerance": float(report.tolerance),
        "line_search_alphas": [float(a) for a in report.line_search_alphas],
        "phi": [float(p) for p in report.phi_history] + [0.5 * float(report.final_residual_norm) ** 2],
        "dphi": [float(d) for d in report.dphi_history],
    }


def run_simulation(config: SimConfig, method: str = "implicit", k: int | None = None,
                   progress: Callable[[int, int], None] | None = None,
                   on_substep: Callable[[int, ParticleSet, GridState], None] | None = None) -> Trace:
    """Simulate ``config`` and return the per-frame trace.

    Runs that hit a non-finite or inverted state stop early; the returned
    trace then holds the completed frames and ``extra["aborted"] = True``.
    """
    if method not in ("implicit", "explicit"):
        raise ParameterError(f"unknown method {method!r}")
    sched = StepSchedule.from_time(config.time, k)
    kk = sched.multiplier
    particles = make_particles(config)
    particles.validate()
    grid = build_grid(config)
    model = model_for(config.material)
    impulses = [bc for bc in config.boundary_conditions if bc.kind == "particle_impulse"]
    dt = sched.substep_dt
    n = particles.count
    positions: list[np.ndarray] = []
    masks: list[np.ndarray] = []
    telemetry: list[dict] | None = [] if method == "implicit" else None
    imparted = np.zeros(3)
    aborted, reason = False, None
    substep = 0
    t0 = time.perf_counter()
    for frame in range(sched.frame_num):
        frame_mask = np.zeros(n, dtype=bool)
        for _ in range(sched.steps_per_frame):
            for bc in impulses:
                imparted += apply_impulse(particles, bc, substep, dt, kk)
            try:
                if method == "explicit":
                    particles, mask = explicit_substep(particles, grid, dt, config, model)
                else:
                    particles, report, mask = implicit_substep(particles, grid, dt, config, model)
                    telemetry.append(_telemetry_record(substep, frame, report))
            except (SimulationAborted, InvertedElementError, DomainError) as exc:
                aborted, reason = True, f"substep {substep}: {exc}"
                logger.warning("run aborted at %s", reason)
                break
            if on_substep is not None:
                on_substep(substep, particles, grid)
            frame_mask |= mask
            substep += 1
        if aborted:
            break
        positions.append(particles.position.copy())
        masks.append(frame_mask)
        if progress is not None:
            progress(frame + 1, sched.frame_num)
    pos = np.array(positions).reshape(len(positions), n, 3)
    msk = np.array(masks, dtype=bool).reshape(len(masks), n)
    extra = {
        "aborted": aborted,
        "abort_reason": reason,
        "frames_requested": sched.frame_num,
        "clamp_margin": config.clamp_margin,
        "impulse_scale": 1.0 / kk,
        "impulse_forces": [scaled_impulse_force(bc, kk).tolist() for bc in impulses],
        "imparted_momentum": imparted.tolist(),
        "youngs": config.material.youngs,
        "poisson": config.material.poisson,
        "density": config.material.density,
        "wall_time": time.perf_counter() - t0,
    }
    return Trace(
        masses=particles.mass.copy(),
        ref_volumes=particles.volume0.copy(),
        positions=pos,
        clamp_masks=msk,
        grid_lim=config.grid_lim,
        frame_dt=config.time.frame_dt,
        substep_dt=dt,
        multiplier=kk,
        steps_per_frame=sched.steps_per_frame,
        scene=config.name,
        method=method,
        extra=extra,
        telemetry=telemetry,
    )


# -- single-degree-of-freedom spring, for verifying the Newmark/Newton chain --


def spring_implicit_step(u, v, mass: float, stiffness: float, dt: float,
                         newmark: NewmarkParams = NewmarkParams(),
                         solver: SolverParams = SolverParams()):
    """One implicit step of ``m u'' + k u = 0`` through the same Newmark/Newton path.

    Returns ``(u, v, report)``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    a = -stiffness * u / mass
    beta, gamma = newmark.beta, newmark.gamma

    def residual(du):
        return -stiffness * (u + du) - mass * newmark_accel(du, v, a, dt, beta)

    W = np.full(u.shape, mass / (beta * dt * dt) + stiffness)
    du0 = dt * v + 0.5 * dt * dt * a
    du, report = newton_solve(residual, du0, W, solver)
    return u + du, newmark_velocity(du, v, a, dt, beta, gamma), report


def spring_explicit_step(u, v, mass: float, stiffness: float, dt: float):
    """Symplectic Euler, matching the explicit grid update order."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float) + dt * (-stiffness * u / mass)
    return u + dt * v, v


def explicit_dt_limit(config: SimConfig) -> float:
    """Rough CFL bound ``h / c`` with ``c`` the P-wave speed."""
    return (config.grid_lim / config.resolution) / config.material.wave_speed


def iter_multipliers(values: Sequence[int] | None = None) -> list[int]:
    return list(values) if values else [1, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20]
