"""Domain types, scene configuration and procedural particle seeding.

All quantities are SI. A scene is described by :class:`SimConfig`, which can be
loaded from a JSON (or YAML) file whose time keys follow the usual MPM scene
convention: ``substep_dt``, ``frame_dt``, ``frame_num``, and for impulse
boundary conditions ``num_dt`` and ``start_time``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .exceptions import ConfigError, EmptySetError, ParameterError

# Nodes per axis beyond [0, resolution] on each side. Two on the high side so a
# particle sitting exactly on grid_lim still has its full 4-node support.
GHOST_LOW = 1
GHOST_HIGH = 2

ACTIVE_MASS_RTOL = 1e-12


class NodeClass(IntEnum):
    INACTIVE = 0
    FREE = 1
    DIRICHLET = 2


def lame_from_young_poisson(E: float, nu: float) -> tuple[float, float]:
    """Return ``(lambda, mu)`` for an isotropic material."""
    if not E > 0:
        raise ParameterError(f"Young's modulus must be positive, got {E}")
    if not -1.0 < nu < 0.5:
        raise ParameterError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


def young_poisson_from_lame(lam: float, mu: float) -> tuple[float, float]:
    E = mu * (3.0 * lam + 2.0 * mu) / (lam + mu)
    nu = lam / (2.0 * (lam + mu))
    return E, nu


@dataclass
class ParticleSet:
    """Lagrangian particle state (structure of arrays)."""

    mass: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    F: np.ndarray
    volume0: np.ndarray
    filled: np.ndarray | None = None

    @property
    def count(self) -> int:
        return int(self.mass.shape[0])

    def __len__(self) -> int:
        return self.count

    def copy(self) -> "ParticleSet":
        return ParticleSet(
            self.mass.copy(),
            self.position.copy(),
            self.velocity.copy(),
            self.F.copy(),
            self.volume0.copy(),
            None if self.filled is None else self.filled.copy(),
        )

    def validate(self) -> None:
        n = self.count
        if self.position.shape != (n, 3) or self.velocity.shape != (n, 3):
            raise ParameterError("position/velocity must have shape (N, 3)")
        if self.F.shape != (n, 3, 3):
            raise ParameterError("F must have shape (N, 3, 3)")
        if np.any(self.mass <= 0) or np.any(self.volume0 <= 0):
            raise ParameterError("particle masses and volumes must be positive")
        if n and np.any(np.linalg.det(self.F) <= 0):
            raise ParameterError("deformation gradient with det(F) <= 0")

    @classmethod
    def at_rest(cls, positions: np.ndarray, volume: float | np.ndarray, density: float) -> "ParticleSet":
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        n = positions.shape[0]
        vol = np.broadcast_to(np.asarray(volume, dtype=float), (n,)).copy()
        return cls(
            mass=density * vol,
            position=positions.copy(),
            velocity=np.zeros((n, 3)),
            F=np.tile(np.eye(3), (n, 1, 1)),
            volume0=vol,
        )

    @staticmethod
    def concat(sets: Sequence["ParticleSet"]) -> "ParticleSet":
        flags = [
            s.filled if s.filled is not None else np.zeros(s.count, dtype=bool) for s in sets
        ]
        return ParticleSet(
            np.concatenate([s.mass for s in sets]),
            np.concatenate([s.position for s in sets]),
            np.concatenate([s.velocity for s in sets]),
            np.concatenate([s.F for s in sets]),
            np.concatenate([s.volume0 for s in sets]),
            np.concatenate(flags),
        )


@dataclass
class GridState:
    """Eulerian background grid over [0, grid_lim]^3 with a ghost layer.

    Node ``(i, j, k)`` sits at ``(i, j, k) * h`` with lattice indices running
    from ``-GHOST_LOW`` to ``resolution + GHOST_HIGH``. Nodal arrays are flat;
    see :meth:`node_id`.
    """

    resolution: int
    grid_lim: float
    node_mass: np.ndarray
    node_velocity: np.ndarray
    node_accel: np.ndarray
    delta_u: np.ndarray
    node_class: np.ndarray
    dirichlet_velocity: np.ndarray

    @property
    def h(self) -> float:
        return self.grid_lim / self.resolution

    @property
    def nodes_per_axis(self) -> int:
        return self.resolution + 1 + GHOST_LOW + GHOST_HIGH

    @property
    def num_nodes(self) -> int:
        return self.nodes_per_axis**3

    def node_id(self, i, j, k):
        n = self.nodes_per_axis
        return ((np.asarray(i) + GHOST_LOW) * n + (np.asarray(j) + GHOST_LOW)) * n + (
            np.asarray(k) + GHOST_LOW
        )

    def node_coords(self, ids=None) -> np.ndarray:
        n = self.nodes_per_axis
        if ids is None:
            ids = np.arange(self.num_nodes)
        ids = np.asarray(ids)
        i, rem = np.divmod(ids, n * n)
        j, k = np.divmod(rem, n)
        lattice = np.stack([i, j, k], axis=-1) - GHOST_LOW
        return lattice * self.h

    def reset(self) -> None:
        for arr in (self.node_mass, self.node_velocity, self.node_accel, self.delta_u, self.dirichlet_velocity):
            arr.fill(0.0)
        self.node_class.fill(NodeClass.INACTIVE)

    @property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_class == NodeClass.FREE)

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_class == NodeClass.DIRICHLET)

    @property
    def active_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_class != NodeClass.INACTIVE)


@dataclass(frozen=True)
class NewmarkParams:
    beta: float = 0.25
    gamma: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.beta <= 0.5:
            raise ParameterError(f"Newmark beta must lie in (0, 1/2], got {self.beta}")
        if not 0.0 < self.gamma <= 1.0:
            raise ParameterError(f"Newmark gamma must lie in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class MaterialParams:
    density: float = 1000.0
    youngs: float = 1e5
    poisson: float = 0.3
    model: str = "neo_hookean"

    def __post_init__(self):
        if not self.density > 0:
            raise ParameterError(f"density must be positive, got {self.density}")
        if self.model != "neo_hookean":
            raise ParameterError(f"unsupported material model {self.model!r}")
        lame_from_young_poisson(self.youngs, self.poisson)

    @property
    def lame(self) -> tuple[float, float]:
        return lame_from_young_poisson(self.youngs, self.poisson)

    @property
    def lame_lambda(self) -> float:
        return self.lame[0]

    @property
    def lame_mu(self) -> float:
        return self.lame[1]

    @property
    def p_wave_modulus(self) -> float:
        lam, mu = self.lame
        return lam + 2.0 * mu

    @property
    def wave_speed(self) -> float:
        return math.sqrt(self.p_wave_modulus / self.density)


@dataclass(frozen=True)
class SolverParams:
    newton_tol: float = 1e-8
    newton_rtol: float = 1e-6
    scale_tol_by_dofs: bool = True
    newton_max_iters: int = 30
    gmres_max_iters: int = 100
    forcing_mode: str = "eisenstat_walker"
    fixed_eta: float = 1e-4
    ew_gamma: float = 0.9
    ew_alpha: float = 2.0
    eta_min: float = 1e-6
    eta_max: float = 0.5
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 12
    line_search_enabled: bool = True
    jvp_target_perturbation: float = 1e-4
    geometric_stiffness: bool = False

    def __post_init__(self):
        if self.forcing_mode not in ("eisenstat_walker", "fixed"):
            raise ParameterError(f"unknown forcing_mode {self.forcing_mode!r}")
        if not 0.0 < self.eta_min <= self.eta_max < 1.0:
            raise ParameterError("require 0 < eta_min <= eta_max < 1")
        if not 0.0 < self.armijo_c < 1.0:
            raise ParameterError("armijo_c must lie in (0, 1)")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ParameterError("backtrack_factor must lie in (0, 1)")
        if self.newton_max_iters < 1 or self.gmres_max_iters < 1:
            raise ParameterError("iteration limits must be >= 1")
        if not self.jvp_target_perturbation > 0:
            raise ParameterError("jvp_target_perturbation must be positive")
        if self.forcing_mode == "fixed" and not 0.0 < self.fixed_eta < 1.0:
            raise ParameterError("fixed_eta must lie in (0, 1)")


@dataclass(frozen=True)
class TimeConfig:
    substep_dt: float
    frame_dt: float
    frame_num: int
    dt_multiplier: int = 1

    def __post_init__(self):
        if not self.substep_dt > 0:
            raise ParameterError("substep_dt must be positive")
        if self.frame_dt < self.substep_dt:
            raise ParameterError("frame_dt must be >= substep_dt")
        if self.frame_num < 0:
            raise ParameterError("frame_num must be >= 0")
        if self.dt_multiplier < 1:
            raise ParameterError("dt_multiplier must be >= 1")


@dataclass(frozen=True)
class BoundaryCondition:
    """Particle impulse or Dirichlet grid region over an axis-aligned box."""

    kind: str
    region_min: tuple[float, float, float]
    region_max: tuple[float, float, float]
    force: tuple[float, float, float] = (0.0, 0.0, 0.0)
    num_dt: int = 1
    start_time: float = 0.0
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("particle_impulse", "dirichlet_region"):
            raise ParameterError(f"unknown boundary condition kind {self.kind!r}")
        if any(lo > hi for lo, hi in zip(self.region_min, self.region_max)):
            raise ParameterError("boundary region min exceeds max")
        if self.num_dt < 0:
            raise ParameterError("num_dt must be >= 0")

    def contains(self, points: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.region_min)
        hi = np.asarray(self.region_max)
        pts = np.asarray(points)
        return np.all((pts >= lo) & (pts <= hi), axis=-1)


@dataclass(frozen=True)
class ParticleSource:
    kind: str = "box"
    lower: tuple[float, float, float] = (0.4, 0.4, 0.4)
    upper: tuple[float, float, float] = (0.6, 0.6, 0.6)
    center: tuple[float, float, float] = (0.5, 0.5, 0.5)
    radius: float = 0.1
    spacing: float = 0.025
    path: str | None = None
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("box", "sphere", "points"):
            raise ParameterError(f"unknown particle source kind {self.kind!r}")
        if self.kind == "points" and not self.path:
            raise ParameterError("points source requires a path")


@dataclass(frozen=True)
class SimConfig:
    time: TimeConfig
    grid_lim: float = 1.0
    resolution: int = 20
    material: MaterialParams = field(default_factory=MaterialParams)
    newmark: NewmarkParams = field(default_factory=NewmarkParams)
    solver: SolverParams = field(default_factory=SolverParams)
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.8)
    boundary_conditions: tuple[BoundaryCondition, ...] = ()
    particles: ParticleSource = field(default_factory=ParticleSource)
    clamp_margin: float = 1e-6
    name: str = "scene"

    def __post_init__(self):
        if not self.grid_lim > 0:
            raise ParameterError("grid_lim must be positive")
        if self.resolution < 4:
            raise ParameterError("resolution must be >= 4 for the cubic B-spline stencil")
        if not 0 < self.clamp_margin < 0.5 * self.grid_lim:
            raise ParameterError("clamp_margin must lie in (0, grid_lim / 2)")

    def with_multiplier(self, k: int) -> "SimConfig":
        return replace(self, time=replace(self.time, dt_multiplier=int(k)))

    def with_solver(self, **changes) -> "SimConfig":
        return replace(self, solver=replace(self.solver, **changes))

    def to_dict(self) -> dict[str, Any]:
        t = self.time
        m = self.material
        bcs = []
        for bc in self.boundary_conditions:
            entry: dict[str, Any] = {
                "type": bc.kind,
                "min": list(bc.region_min),
                "max": list(bc.region_max),
            }
            if bc.kind == "particle_impulse":
                entry.update(force=list(bc.force), num_dt=bc.num_dt, start_time=bc.start_time)
            else:
                entry["velocity"] = list(bc.velocity)
            bcs.append(entry)
        src = self.particles
        particles: dict[str, Any] = {"kind": src.kind, "spacing": src.spacing, "velocity": list(src.velocity)}
        if src.kind == "box":
            particles.update(min=list(src.lower), max=list(src.upper))
        elif src.kind == "sphere":
            particles.update(center=list(src.center), radius=src.radius)
        else:
            particles["path"] = src.path
        return {
            "name": self.name,
            "grid_lim": self.grid_lim,
            "resolution": self.resolution,
            "time": {
                "substep_dt": t.substep_dt,
                "frame_dt": t.frame_dt,
                "frame_num": t.frame_num,
                "dt_multiplier": t.dt_multiplier,
            },
            "material": {"density": m.density, "E": m.youngs, "nu": m.poisson, "model": m.model},
            "newmark": {"beta": self.newmark.beta, "gamma": self.newmark.gamma},
            "solver": {f: getattr(self.solver, f) for f in SolverParams.__dataclass_fields__},
            "gravity": list(self.gravity),
            "boundary_conditions": bcs,
            "particles": particles,
            "clamp_margin": self.clamp_margin,
        }


# -- configuration loading ---------------------------------------------------


def _vec3(value: Any, key: str) -> tuple[float, float, float]:
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a list of 3 numbers, got {value!r}") from None
    if len(out) != 3:
        raise ConfigError(key, f"expected 3 components, got {len(out)}")
    return out  # type: ignore[return-value]


def _coerce(value: Any, annotation: str, key: str) -> Any:
    # YAML 1.1 reads forms like "2.0e5" as strings; numeric fields accept them
    if isinstance(value, str) and annotation in ("float", "int"):
        try:
            return float(value) if annotation == "float" else int(value)
        except ValueError:
            raise ConfigError(key, f"expected a number, got {value!r}") from None
    return value


def _section(data: Mapping[str, Any], key: str, cls, aliases: Mapping[str, str] | None = None):
    raw = dict(data.get(key, {}) or {})
    aliases = aliases or {}
    kwargs = {}
    known = set(cls.__dataclass_fields__)
    for name, value in raw.items():
        target = aliases.get(name, name)
        if target not in known:
            raise ConfigError(f"{key}.{name}", "unknown key")
        kwargs[target] = _coerce(value, cls.__dataclass_fields__[target].type, f"{key}.{name}")
    try:
        return cls(**kwargs)
    except ParameterError as exc:
        raise ConfigError(key, str(exc)) from None
    except TypeError as exc:
        raise ConfigError(key, str(exc)) from None


def _boundary_condition(entry: Mapping[str, Any], idx: int) -> BoundaryCondition:
    key = f"boundary_conditions[{idx}]"
    kind = entry.get("type", entry.get("kind"))
    if kind is None:
        raise ConfigError(f"{key}.type", "missing")
    if "min" in entry and "max" in entry:
        lo, hi = _vec3(entry["min"], f"{key}.min"), _vec3(entry["max"], f"{key}.max")
    elif "point" in entry and "size" in entry:
        p, s = np.asarray(_vec3(entry["point"], f"{key}.point")), np.asarray(_vec3(entry["size"], f"{key}.size"))
        lo, hi = tuple(p - s), tuple(p + s)
    else:
        raise ConfigError(key, "region needs either min/max or point/size")
    try:
        return BoundaryCondition(
            kind=kind,
            region_min=lo,
            region_max=hi,
            force=_vec3(entry.get("force", (0, 0, 0)), f"{key}.force"),
            num_dt=int(entry.get("num_dt", 1)),
            start_time=float(entry.get("start_time", 0.0)),
            velocity=_vec3(entry.get("velocity", (0, 0, 0)), f"{key}.velocity"),
        )
    except ParameterError as exc:
        raise ConfigError(key, str(exc)) from None


def _particle_source(raw: Mapping[str, Any], base_dir: Path | None) -> ParticleSource:
    raw = dict(raw)
    kind = raw.pop("kind", "box")
    kwargs: dict[str, Any] = {"kind": kind}
    if "min" in raw:
        kwargs["lower"] = _vec3(raw.pop("min"), "particles.min")
    if "max" in raw:
        kwargs["upper"] = _vec3(raw.pop("max"), "particles.max")
    if "center" in raw:
        kwargs["center"] = _vec3(raw.pop("center"), "particles.center")
    if "velocity" in raw:
        kwargs["velocity"] = _vec3(raw.pop("velocity"), "particles.velocity")
    for name in ("radius", "spacing"):
        if name in raw:
            kwargs[name] = float(raw.pop(name))
    if "path" in raw:
        path = Path(raw.pop("path"))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        kwargs["path"] = str(path)
    if raw:
        raise ConfigError(f"particles.{next(iter(raw))}", "unknown key")
    try:
        return ParticleSource(**kwargs)
    except ParameterError as exc:
        raise ConfigError("particles", str(exc)) from None


def config_from_dict(data: Mapping[str, Any], base_dir: Path | None = None) -> SimConfig:
    if "time" not in data:
        raise ConfigError("time", "missing section")
    time = _section(data, "time", TimeConfig)
    material = _section(data, "material", MaterialParams, {"E": "youngs", "nu": "poisson", "rho": "density"})
    newmark = _section(data, "newmark", NewmarkParams)
    solver = _section(data, "solver", SolverParams)
    bcs = tuple(_boundary_condition(e, i) for i, e in enumerate(data.get("boundary_conditions", []) or []))
    particles = _particle_source(data.get("particles", {}) or {}, base_dir)
    kwargs: dict[str, Any] = dict(
        time=time,
        material=material,
        newmark=newmark,
        solver=solver,
        boundary_conditions=bcs,
        particles=particles,
    )
    if "gravity" in data:
        kwargs["gravity"] = _vec3(data["gravity"], "gravity")
    for key, conv in (("grid_lim", float), ("resolution", int), ("clamp_margin", float), ("name", str)):
        if key in data:
            try:
                kwargs[key] = conv(data[key])
            except (TypeError, ValueError):
                raise ConfigError(key, f"invalid value {data[key]!r}") from None
    known = {"time", "material", "newmark", "solver", "boundary_conditions", "particles", "gravity",
             "grid_lim", "resolution", "clamp_margin", "name"}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown key")
    try:
        return SimConfig(**kwargs)
    except ParameterError as exc:
        raise ConfigError("scene", str(exc)) from None


def load_config(path: str | Path) -> SimConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("file", f"invalid JSON: {exc}") from None
    if not isinstance(data, Mapping):
        raise ConfigError("file", "top level must be a mapping")
    return config_from_dict(data, base_dir=path.parent)


def save_config(config: SimConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2))


# -- seeding -----------------------------------------------------------------


def seed_particles_box(lower, upper, spacing: float, material: MaterialParams) -> ParticleSet:
    """Regular lattice filling the box, one particle at each cell center.

    A box of side ``L`` holds ``round(L / spacing)`` particles per axis so the
    seeded mass equals ``density * volume`` for lattice-aligned boxes.
    """
    if not spacing > 0:
        raise ParameterError("spacing must be positive")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    extent = upper - lower
    counts = np.floor(extent / spacing + 1e-9).astype(int)
    if np.any(extent <= 0) or np.any(counts < 1):
        raise EmptySetError(f"box {lower}..{upper} holds no particles at spacing {spacing}")
    axes = [lower[a] + spacing * (np.arange(counts[a]) + 0.5) for a in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return ParticleSet.at_rest(grid, spacing**3, material.density)


def seed_particles_sphere(center, radius: float, spacing: float, material: MaterialParams) -> ParticleSet:
    center = np.asarray(center, dtype=float)
    box = seed_particles_box(center - radius, center + radius, spacing, material)
    inside = np.linalg.norm(box.position - center, axis=1) <= radius
    if not inside.any():
        raise EmptySetError("sphere holds no particles")
    return ParticleSet.at_rest(box.position[inside], spacing**3, material.density)


def build_grid(config: SimConfig | None = None, *, grid_lim: float | None = None,
               resolution: int | None = None) -> GridState:
    if config is not None:
        grid_lim = config.grid_lim if grid_lim is None else grid_lim
        resolution = config.resolution if resolution is None else resolution
    if grid_lim is None or resolution is None:
        raise ParameterError("build_grid needs a config or grid_lim and resolution")
    if resolution < 4:
        raise ParameterError("resolution must be >= 4 for the cubic B-spline stencil")
    if not grid_lim > 0:
        raise ParameterError("grid_lim must be positive")
    n = (resolution + 1 + GHOST_LOW + GHOST_HIGH) ** 3
    return GridState(
        resolution=int(resolution),
        grid_lim=float(grid_lim),
        node_mass=np.zeros(n),
        node_velocity=np.zeros((n, 3)),
        node_accel=np.zeros((n, 3)),
        delta_u=np.zeros((n, 3)),
        node_class=np.zeros(n, dtype=np.int8),
        dirichlet_velocity=np.zeros((n, 3)),
    )
