"""Trace-based evaluation metrics.

Everything here is a pure function of trace arrays and solver telemetry:
boundary-hit mass fraction (BMF) and the stability gate, drift against a
1x reference (COMD, mwRMSD, AUC over multipliers), mass drift, momentum
irregularity, saturation ratio, and solver ablation summaries.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import EmptySetError, ParameterError, TraceFormatError
from .trace_io import Trace

GATE_BMF_THRESHOLD = 0.5
GATE_RATIO_THRESHOLD = 0.5
MASS_EPS = 1e-12
IRREGULARITY_EPS = 1e-12
SATURATION_THRESHOLD = 0.98
LUMA = np.array([0.2126, 0.7152, 0.0722])


# -- reports -----------------------------------------------------------------


@dataclass
class DriftReport:
    k: int
    reference: str
    comd_series: np.ndarray
    comd: float
    mwrmsd_series: np.ndarray
    mwrmsd: float

    def to_dict(self) -> dict:
        return {"k": self.k, "reference": self.reference, "comd": self.comd, "mwrmsd": self.mwrmsd,
                "comd_series": self.comd_series.tolist(), "mwrmsd_series": self.mwrmsd_series.tolist()}


@dataclass
class StabilityReport:
    multipliers: list[int]
    ratios: list[float]
    passed: list[bool]
    k_max: int
    fail_percent: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PlausibilityReport:
    mass_drift: np.ndarray
    impulse_irr: np.ndarray
    torque_irr: np.ndarray
    P: np.ndarray
    L: np.ndarray
    c: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mass_drift_max": float(self.mass_drift.max()) if self.mass_drift.size else 0.0,
            "impulse_irr_mean": float(self.impulse_irr.mean()) if self.impulse_irr.size else None,
            "torque_irr_mean": float(self.torque_irr.mean()) if self.torque_irr.size else None,
            "mass_drift": self.mass_drift.tolist(),
            "impulse_irr": self.impulse_irr.tolist(),
            "torque_irr": self.torque_irr.tolist(),
        }


@dataclass
class AblationReport:
    success_rate: float
    success_rate_base: float
    speedup: float
    rel_end: float | None
    rel_end_base: float | None
    gmres_mean: float | None
    gmres_max: int | None
    gmres_mean_base: float | None
    gmres_max_base: int | None
    frames: int = 0
    substeps: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


# -- BMF and gate -------------------------------------------------------------


def bmf_from_masks(masks: np.ndarray, masses: np.ndarray) -> np.ndarray:
    masks = np.asarray(masks, dtype=bool)
    masses = np.asarray(masses, dtype=float)
    if masks.ndim != 2 or masks.shape[1] != masses.shape[0]:
        raise TraceFormatError("clamp masks must have shape (T, N) matching the masses")
    return (masks.astype(float) @ masses) / masses.sum()


def bmf_series(trace: Trace) -> np.ndarray:
    """Per-frame mass fraction of clamped particles."""
    if trace.clamp_masks is None:
        raise TraceFormatError("trace has no clamp masks")
    return bmf_from_masks(trace.clamp_masks, trace.masses)


def gate_from_bmf(bmf: np.ndarray) -> tuple[float, bool]:
    bmf = np.asarray(bmf, dtype=float)
    if bmf.size == 0:
        raise EmptySetError("gate needs at least one frame")
    r = float(np.mean(bmf > GATE_BMF_THRESHOLD))
    return r, r > GATE_RATIO_THRESHOLD


def gate(trace: Trace) -> tuple[float, bool]:
    """``r = mean_t [BMF_t > 0.5]``; the run fails when ``r > 0.5``.

    Aborted traces are completed first (see :func:`complete_aborted`), so
    the frames a crashed run never produced count as fully collapsed.
    """
    return gate_from_bmf(bmf_series(complete_aborted(trace)))


def complete_aborted(trace: Trace) -> Trace:
    """Pad an aborted trace to its requested length.

    Missing frames repeat the last recorded positions (the domain center if
    no frame was recorded) with every particle flagged as clamped.
    """
    want = int(trace.extra.get("frames_requested", trace.num_frames))
    missing = want - trace.num_frames
    if not trace.extra.get("aborted") or missing <= 0:
        return trace
    if trace.num_frames:
        last = trace.positions[-1]
    else:
        last = np.full((trace.num_particles, 3), 0.5 * trace.grid_lim)
    pad_pos = np.broadcast_to(last, (missing,) + last.shape)
    pad_mask = np.ones((missing, trace.num_particles), dtype=bool)
    return replace(
        trace,
        positions=np.concatenate([trace.positions, pad_pos]),
        clamp_masks=np.concatenate([trace.clamp_masks, pad_mask]),
        extra={**trace.extra, "padded_frames": missing},
    )


def stability_frontier(outcomes: Mapping[int, bool] | Sequence[tuple[int, bool]],
                       ratios: Mapping[int, float] | None = None) -> StabilityReport:
    """Frontier from per-multiplier gate outcomes (``True`` = passed)."""
    items = sorted(dict(outcomes).items())
    if not items:
        raise EmptySetError("stability frontier needs at least one tested multiplier")
    ks = [int(k) for k, _ in items]
    passed = [bool(p) for _, p in items]
    k_max = max((k for k, p in zip(ks, passed) if p), default=0)
    fail = 100.0 * sum(not p for p in passed) / len(passed)
    r = [float(ratios[k]) if ratios and k in ratios else float("nan") for k in ks]
    return StabilityReport(ks, r, passed, k_max, fail)


# -- drift ---------------------------------------------------------------------


def center_of_mass(positions: np.ndarray, masses: np.ndarray) -> np.ndarray:
    """Mass-weighted center per frame, shape (T, 3)."""
    m = np.asarray(masses, dtype=float)
    return np.tensordot(np.asarray(positions), m, axes=([1], [0])) / m.sum()


def _check_pair(a: Trace, b: Trace) -> None:
    if a.num_particles != b.num_particles:
        raise TraceFormatError(f"particle counts differ: {a.num_particles} vs {b.num_particles}")
    if a.num_frames != b.num_frames:
        raise TraceFormatError(f"frame counts differ: {a.num_frames} vs {b.num_frames}")
    if not np.array_equal(a.masses, b.masses):
        raise TraceFormatError("particle masses differ between traces")
    if a.grid_lim != b.grid_lim:
        raise TraceFormatError("grid_lim differs between traces")
    if a.num_frames == 0:
        raise EmptySetError("drift needs at least one frame")


def comd(trace_k: Trace, trace_ref: Trace) -> tuple[np.ndarray, float]:
    """Center-of-mass drift normalized by ``grid_lim``: per-frame series and time mean."""
    _check_pair(trace_k, trace_ref)
    ck = center_of_mass(trace_k.positions, trace_k.masses)
    cr = center_of_mass(trace_ref.positions, trace_ref.masses)
    series = np.linalg.norm(ck - cr, axis=1) / trace_k.grid_lim
    return series, float(series.mean())


def mwrmsd(trace_k: Trace, trace_ref: Trace) -> tuple[np.ndarray, float]:
    """Mass-weighted RMS deviation with the clamp penalty ``D_max = grid_lim``.

    Particles clamped in either trace at frame t take deviation ``D_max``;
    all others ``min(|x_k - x_ref|, D_max)``.
    """
    _check_pair(trace_k, trace_ref)
    dmax = trace_k.grid_lim
    d = np.linalg.norm(trace_k.positions - trace_ref.positions, axis=2)
    d = np.minimum(d, dmax)
    clamped = trace_k.clamp_masks | trace_ref.clamp_masks
    d = np.where(clamped, dmax, d)
    m = trace_k.masses
    series = np.sqrt((d**2 @ m) / m.sum()) / dmax
    return series, float(series.mean())


def drift_report(trace_k: Trace, trace_ref: Trace, reference: str = "1x") -> DriftReport:
    a, b = complete_aborted(trace_k), complete_aborted(trace_ref)
    cs, c = comd(a, b)
    ms, m = mwrmsd(a, b)
    return DriftReport(int(trace_k.multiplier), reference, cs, c, ms, m)


def drift_auc(ks: Sequence[float], values: Sequence[float], valid: Sequence[bool] | None = None) -> float:
    """Trapezoidal area under drift-vs-k over valid runs, divided by the valid k span.

    Fewer than two valid points give the worst case 1.0.
    """
    ks = np.asarray(ks, dtype=float)
    vals = np.asarray(values, dtype=float)
    if ks.size == 0:
        raise EmptySetError("AUC needs at least one tested multiplier")
    if ks.shape != vals.shape:
        raise ParameterError("ks and values must have the same length")
    ok = np.ones(ks.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    order = np.argsort(ks[ok], kind="stable")
    kv, dv = ks[ok][order], vals[ok][order]
    if kv.size < 2 or kv[-1] == kv[0]:
        return 1.0
    return float(np.trapezoid(dv, kv) / (kv[-1] - kv[0]))


# -- physical plausibility -----------------------------------------------------


def mass_drift(source: Trace | Sequence[float] | np.ndarray) -> np.ndarray:
    """``|M_t - M_1| / (M_1 + eps)`` per frame.

    Accepts a trace (masses stored once, so the series is the frame count of
    zeros) or an explicit per-frame total-mass series from an external tool.
    """
    if isinstance(source, Trace):
        M = np.full(max(source.num_frames, 1), source.total_mass)
    else:
        M = np.asarray(source, dtype=float)
        if M.size == 0:
            raise EmptySetError("mass drift needs at least one frame")
    return np.abs(M - M[0]) / (M[0] + MASS_EPS)


def finite_difference_velocities(positions: np.ndarray, dt: float) -> np.ndarray:
    """Forward difference at the first frame, central inside, backward at the last."""
    x = np.asarray(positions, dtype=float)
    if x.shape[0] < 2:
        raise ParameterError("velocity estimation needs at least 2 frames")
    v = np.empty_like(x)
    v[0] = (x[1] - x[0]) / dt
    v[-1] = (x[-1] - x[-2]) / dt
    if x.shape[0] > 2:
        v[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    return v


def momentum_series(trace: Trace, dt: float | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Total linear momentum ``P_t``, angular momentum about the mass center ``L_t``, and ``c_t``."""
    dt = trace.frame_interval if dt is None else dt
    return momentum_from_positions(trace.positions, trace.masses, dt)


def momentum_from_positions(positions: np.ndarray, masses: np.ndarray, dt: float):
    x = np.asarray(positions, dtype=float)
    m = np.asarray(masses, dtype=float)
    v = finite_difference_velocities(x, dt)
    mv = v * m[None, :, None]
    P = mv.sum(axis=1)
    c = center_of_mass(x, m)
    L = np.cross(x - c[:, None, :], mv).sum(axis=1)
    return P, L, c


def second_difference_norm(series: np.ndarray) -> np.ndarray:
    s = np.asarray(series, dtype=float)
    if s.shape[0] < 3:
        raise ParameterError("second differences need at least 3 frames")
    d2 = s[2:] - 2.0 * s[1:-1] + s[:-2]
    return np.linalg.norm(d2.reshape(d2.shape[0], -1), axis=1)


def irregularity(P: np.ndarray, L: np.ndarray, total_mass: float, grid_lim: float,
                 dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Normalized second temporal differences of ``P_t`` and ``L_t`` (frames 3..T).

    ``P_scale = M grid_lim / dt`` and ``L_scale = M grid_lim^2 / dt``.
    """
    p_scale = total_mass * grid_lim / dt
    l_scale = total_mass * grid_lim**2 / dt
    imp = second_difference_norm(P) / (p_scale + IRREGULARITY_EPS)
    tor = second_difference_norm(L) / (l_scale + IRREGULARITY_EPS)
    return imp, tor


def plausibility_report(trace: Trace) -> PlausibilityReport:
    md = mass_drift(trace)
    if trace.num_frames >= 2:
        P, L, c = momentum_series(trace)
    else:
        P = L = c = np.zeros((trace.num_frames, 3))
    if trace.num_frames >= 3:
        imp, tor = irregularity(P, L, trace.total_mass, trace.grid_lim, trace.frame_interval)
    else:
        imp = tor = np.zeros(0)
    return PlausibilityReport(md, imp, tor, P, L, c)


def sat_ratio(frames: np.ndarray, threshold: float = SATURATION_THRESHOLD) -> tuple[float, float, float]:
    """Mean, standard deviation, and range of the per-frame saturated-pixel fraction.

    ``frames`` is luminance ``(T, H, W)`` or RGB ``(T, H, W, 3)`` in [0, 1].
    """
    series = sat_ratio_series(frames, threshold)
    return float(series.mean()), float(series.std()), float(series.max() - series.min())


def sat_ratio_series(frames: np.ndarray, threshold: float = SATURATION_THRESHOLD) -> np.ndarray:
    f = np.asarray(frames, dtype=float)
    if f.size == 0 or f.shape[0] == 0:
        raise EmptySetError("saturation ratio needs at least one non-empty frame")
    if f.ndim == 4 and f.shape[-1] == 3:
        f = f @ LUMA
    if f.ndim == 2:
        f = f[None]
    if f.ndim != 3:
        raise ParameterError(f"expected (T, H, W) luminance or (T, H, W, 3) RGB, got shape {f.shape}")
    return (f >= threshold).reshape(f.shape[0], -1).mean(axis=1)


# -- solver ablation -----------------------------------------------------------


def _summaries(telemetry: Sequence[Mapping]):
    if not telemetry:
        raise EmptySetError("ablation needs non-empty telemetry")
    frames: dict[int, bool] = {}
    for rec in telemetry:
        f = int(rec["frame"])
        frames[f] = frames.get(f, True) and bool(rec["converged"])
    success = 100.0 * sum(frames.values()) / len(frames)
    solves = [r for r in telemetry if r["converged"] and int(r.get("newton_iters", 0)) > 0]
    ratios = [r["R_end"] / r["R0"] for r in solves if r["R0"] > 0]
    rel_end = float(np.mean(ratios)) if ratios else None
    gm = [int(np.sum(r.get("gmres_iters", []))) for r in solves]
    gmean = float(np.mean(gm)) if gm else None
    gmax = int(max(gm)) if gm else None
    wall = float(sum(r["wall_time"] for r in telemetry))
    return success, rel_end, gmean, gmax, wall, len(frames)


def ablation_report(telemetry: Sequence[Mapping], telemetry_base: Sequence[Mapping]) -> AblationReport:
    """Compare a solver variant against the base run.

    Success is the percentage of frames whose substeps all converged.
    Speedup is total base Newton time over total variant Newton time.
    RelEnd (mean ``R_end / R0``) and GMRES iterations (per-substep totals,
    mean and max) are taken over converged substeps that ran at least one
    Newton iteration; they are ``None`` when there are none.
    """
    s, rel, gmean, gmax, wall, nframes = _summaries(telemetry)
    sb, relb, gmeanb, gmaxb, wallb, _ = _summaries(telemetry_base)
    speedup = wallb / wall if wall > 0 else math.inf
    return AblationReport(s, sb, speedup, rel, relb, gmean, gmax, gmeanb, gmaxb, nframes, len(telemetry))


def sweep_outcomes(traces: Iterable[Trace]) -> tuple[dict[int, bool], dict[int, float]]:
    outcomes, ratios = {}, {}
    for tr in traces:
        r, failed = gate(tr)
        outcomes[int(tr.multiplier)] = not failed
        ratios[int(tr.multiplier)] = r
    return outcomes, ratios
