"""On-disk trace format.

A trace directory holds::

    meta.json    header (sorted keys, no trailing newline)
    static.bin   N masses then N reference volumes, float64 little-endian
    frames.bin   T frames x N particles x (x, y, z), float64 little-endian
    clamps.bin   T frames x ceil(N/8) bytes, particle i -> byte i//8, bit i%8 (LSB first)
    solver.log   optional, one JSON record per substep, newline terminated;
                 meta.json records how many so truncation is detectable

The point-set format used for particle filling is a text file whose first
line is the point count followed by one ``x y z`` line per point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .exceptions import TraceFormatError

FORMAT_VERSION = 1
_F64 = np.dtype("<f8")


@dataclass
class Trace:
    masses: np.ndarray
    ref_volumes: np.ndarray
    positions: np.ndarray  # (T, N, 3)
    clamp_masks: np.ndarray  # (T, N) bool
    grid_lim: float
    frame_dt: float
    substep_dt: float
    multiplier: int = 1
    steps_per_frame: int = 1
    scene: str = "scene"
    method: str = "implicit"
    extra: dict[str, Any] = field(default_factory=dict)
    telemetry: list[dict[str, Any]] | None = None

    @property
    def num_particles(self) -> int:
        return int(self.masses.shape[0])

    @property
    def num_frames(self) -> int:
        return int(self.positions.shape[0])

    @property
    def frame_interval(self) -> float:
        """Simulated time between exported frames."""
        return self.steps_per_frame * self.substep_dt

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def meta(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "scene": self.scene,
            "method": self.method,
            "num_particles": self.num_particles,
            "num_frames": self.num_frames,
            "grid_lim": self.grid_lim,
            "frame_dt": self.frame_dt,
            "substep_dt": self.substep_dt,
            "dt_multiplier": self.multiplier,
            "steps_per_frame": self.steps_per_frame,
            "telemetry_records": None if self.telemetry is None else len(self.telemetry),
            "extra": self.extra,
        }

    def validate(self) -> None:
        n, t = self.num_particles, self.num_frames
        if n == 0:
            raise TraceFormatError("trace has no particles")
        if self.ref_volumes.shape != (n,):
            raise TraceFormatError("ref_volumes length differs from masses")
        if self.positions.shape != (t, n, 3):
            raise TraceFormatError(f"positions shape {self.positions.shape} != ({t}, {n}, 3)")
        if self.clamp_masks.shape != (t, n):
            raise TraceFormatError(f"clamp mask shape {self.clamp_masks.shape} != ({t}, {n})")
        if not np.all(np.isfinite(self.masses)) or np.any(self.masses <= 0):
            raise TraceFormatError("masses must be finite and strictly positive")
        if not np.all(np.isfinite(self.ref_volumes)) or np.any(self.ref_volumes <= 0):
            raise TraceFormatError("reference volumes must be finite and strictly positive")
        if not np.all(np.isfinite(self.positions)):
            raise TraceFormatError("positions contain NaN or inf")
        if t and (self.positions.min() < 0.0 or self.positions.max() > self.grid_lim):
            raise TraceFormatError(f"positions leave [0, {self.grid_lim}]")


def _expect_size(path: Path, expected: int) -> bytes:
    data = path.read_bytes()
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "oversized"
        raise TraceFormatError(f"{path.name} {kind}: expected {expected} bytes, found {len(data)}")
    return data


def write_trace(trace: Trace, directory: str | Path) -> Path:
    trace.validate()
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.json").write_text(json.dumps(trace.meta(), indent=2, sort_keys=True))
    static = np.concatenate([trace.masses, trace.ref_volumes]).astype(_F64)
    (out / "static.bin").write_bytes(static.tobytes())
    (out / "frames.bin").write_bytes(np.ascontiguousarray(trace.positions, dtype=_F64).tobytes())
    packed = np.packbits(trace.clamp_masks.astype(bool), axis=1, bitorder="little")
    (out / "clamps.bin").write_bytes(packed.tobytes())
    log = out / "solver.log"
    if trace.telemetry is not None:
        lines = "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in trace.telemetry)
        log.write_text(lines)
    elif log.exists():
        log.unlink()
    return out


def read_trace(directory: str | Path) -> Trace:
    src = Path(directory)
    try:
        meta = json.loads((src / "meta.json").read_text())
    except FileNotFoundError:
        raise TraceFormatError(f"{src} has no meta.json") from None
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"corrupt meta.json: {exc}") from None
    try:
        n = int(meta["num_particles"])
        t = int(meta["num_frames"])
        grid_lim = float(meta["grid_lim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"meta.json missing or invalid field: {exc}") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise TraceFormatError(f"unsupported format_version {meta.get('format_version')!r}")
    if n <= 0 or t < 0:
        raise TraceFormatError("meta.json declares an empty or negative size")
    try:
        static = np.frombuffer(_expect_size(src / "static.bin", 2 * n * 8), dtype=_F64)
        frames = np.frombuffer(_expect_size(src / "frames.bin", t * n * 3 * 8), dtype=_F64)
        nbytes = math.ceil(n / 8)
        clamps = np.frombuffer(_expect_size(src / "clamps.bin", t * nbytes), dtype=np.uint8)
    except FileNotFoundError as exc:
        raise TraceFormatError(f"missing trace file: {exc.filename}") from None
    masks = np.unpackbits(clamps.reshape(t, nbytes), axis=1, count=n, bitorder="little").astype(bool)
    telemetry = None
    log = src / "solver.log"
    if log.exists():
        text = log.read_text()
        if text and not text.endswith("\n"):
            raise TraceFormatError("solver.log truncated: last record not newline-terminated")
        try:
            telemetry = [json.loads(line) for line in text.splitlines() if line]
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"corrupt solver.log: {exc}") from None
        expected = meta.get("telemetry_records")
        if expected is not None and len(telemetry) != expected:
            raise TraceFormatError(f"solver.log truncated: expected {expected} records, found {len(telemetry)}")
    elif meta.get("telemetry_records") is not None:
        raise TraceFormatError("meta.json declares solver telemetry but solver.log is missing")
    trace = Trace(
        masses=static[:n].copy(),
        ref_volumes=static[n:].copy(),
        positions=frames.reshape(t, n, 3).copy(),
        clamp_masks=masks,
        grid_lim=grid_lim,
        frame_dt=float(meta.get("frame_dt", 0.0)),
        substep_dt=float(meta.get("substep_dt", 0.0)),
        multiplier=int(meta.get("dt_multiplier", 1)),
        steps_per_frame=int(meta.get("steps_per_frame", 1)),
        scene=str(meta.get("scene", "")),
        method=str(meta.get("method", "")),
        extra=dict(meta.get("extra", {})),
        telemetry=telemetry,
    )
    trace.validate()
    return trace


def write_points(points: np.ndarray, path: str | Path) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = [str(len(pts))] + [f"{x!r} {y!r} {z!r}" for x, y, z in pts.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_points(path: str | Path) -> np.ndarray:
    lines = Path(path).read_text().split("\n")
    try:
        count = int(lines[0].strip())
    except (IndexError, ValueError):
        raise TraceFormatError(f"{path}: first line must hold the point count") from None
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != count:
        raise TraceFormatError(f"{path}: header declares {count} points, found {len(body)}")
    if count == 0:
        return np.zeros((0, 3))
    try:
        pts = np.array([[float(v) for v in ln.split()] for ln in body])
    except ValueError as exc:
        raise TraceFormatError(f"{path}: {exc}") from None
    if pts.shape != (count, 3):
        raise TraceFormatError(f"{path}: every point line needs exactly 3 coordinates")
    return pts
