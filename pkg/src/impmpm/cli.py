"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime abort
(partial artifacts are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics
from .core import MaterialParams, SimConfig, load_config, save_config
from .exceptions import ConfigError, MPMError, ParameterError, TraceFormatError
from .fill import classify_interior, fill_particles, voxelize
from .scenes import SCENES
from .stepper import iter_multipliers, run_simulation
from .trace_io import Trace, read_points, read_trace, write_points, write_trace

logger = logging.getLogger("impmpm")

OUT_ENV = "IMPMPM_OUT"
EXIT_OK, EXIT_USAGE, EXIT_ABORT = 0, 1, 2


def default_out(sub: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "impmpm_out")) / sub


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _write_csv(path: Path, columns: dict[str, list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    rows = max((len(v) for v in columns.values()), default=0)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(rows):
            w.writerow([columns[n][i] if i < len(columns[n]) else "" for n in names])


def parse_multipliers(text: str) -> list[int]:
    try:
        ks = [int(tok) for tok in text.replace(" ", "").split(",") if tok]
    except ValueError:
        raise argparse.ArgumentTypeError(f"multipliers must be comma-separated integers, got {text!r}") from None
    if any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("multipliers must be >= 1")
    return ks


def _load(args) -> SimConfig:
    path = Path(args.config)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    return load_config(path)


# -- simulate ------------------------------------------------------------------


def _trace_figures(trace: Trace, out: Path) -> None:
    from . import plotting

    if trace.num_frames == 0:
        return
    com = metrics.center_of_mass(trace.positions, trace.masses)
    plotting.plot_center_of_mass(com, trace.frame_interval, out / "center_of_mass.png",
                                 f"{trace.scene} ({trace.method}, k={trace.multiplier})")
    plotting.plot_frame_series({"BMF": metrics.bmf_series(trace)}, trace.frame_interval, out / "bmf.png")


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = Path(args.out) if args.out else default_out(f"{cfg.name}_{args.method}_k{args.dt_multiplier}")
    trace = run_simulation(cfg, args.method, args.dt_multiplier)
    write_trace(trace, out)
    save_config(cfg.with_multiplier(args.dt_multiplier), out / "config.json")
    if args.figures:
        _trace_figures(trace, out)
    status = "aborted" if trace.extra["aborted"] else "done"
    print(f"{status}: {trace.num_frames}/{cfg.time.frame_num} frames -> {out}")
    if trace.extra["aborted"]:
        print(f"reason: {trace.extra['abort_reason']}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


# -- sweep -----------------------------------------------------------------------


def _sweep_member(cfg: SimConfig, method: str, k: int, out: Path) -> Path:
    trace = run_simulation(cfg, method, k)
    write_trace(trace, out)
    return out


def cmd_sweep(args) -> int:
    cfg = _load(args)
    ks = args.multipliers
    if not ks:
        print("error: empty multiplier list", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out) if args.out else default_out(f"{cfg.name}_{args.method}_sweep")
    dirs = {k: out / f"k{k:02d}" for k in ks}
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_sweep_member, cfg, args.method, k, dirs[k]) for k in ks]
            for f in futures:
                f.result()
    else:
        for k in ks:
            _sweep_member(cfg, args.method, k, dirs[k])
    traces = {k: read_trace(dirs[k]) for k in ks}
    outcomes, ratios = metrics.sweep_outcomes(traces.values())
    report = metrics.stability_frontier(outcomes, ratios)
    ref_k = min(ks)
    drifts = {k: metrics.drift_report(traces[k], traces[ref_k]) for k in ks}
    valid = [outcomes[k] for k in report.multipliers]
    comd_vals = [drifts[k].comd for k in report.multipliers]
    mw_vals = [drifts[k].mwrmsd for k in report.multipliers]
    summary = report.to_dict()
    summary.update(
        method=args.method,
        reference_multiplier=ref_k,
        comd=comd_vals,
        mwrmsd=mw_vals,
        comd_auc=metrics.drift_auc(report.multipliers, comd_vals, valid),
        mwrmsd_auc=metrics.drift_auc(report.multipliers, mw_vals, valid),
        aborted=[bool(traces[k].extra.get("aborted")) for k in report.multipliers],
    )
    _write_json(out / "stability.json", summary)
    _write_csv(out / "sweep.csv", {
        "k": report.multipliers,
        "passed": [int(p) for p in report.passed],
        "r": report.ratios,
        "comd": comd_vals,
        "mwrmsd": mw_vals,
        "aborted": [int(a) for a in summary["aborted"]],
    })
    if args.figures:
        from . import plotting

        plotting.plot_sweep(report.multipliers, {"COMD": comd_vals, "mwRMSD": mw_vals}, report.passed,
                            out / "drift_vs_k.png")
        plotting.plot_sweep(report.multipliers, {"r": report.ratios}, report.passed, out / "gate_vs_k.png",
                            ylabel="exceedance ratio r")
    print(f"k_max={report.k_max} fail={report.fail_percent:.1f}% -> {out / 'stability.json'}")
    return EXIT_OK


# -- metrics ---------------------------------------------------------------------


def cmd_metrics(args) -> int:
    trace = read_trace(args.trace)
    full = metrics.complete_aborted(trace)
    bmf = metrics.bmf_series(full)
    r, failed = metrics.gate_from_bmf(bmf)
    plaus = metrics.plausibility_report(trace)
    report: dict = {
        "trace": str(args.trace),
        "scene": trace.scene,
        "method": trace.method,
        "k": trace.multiplier,
        "frames": trace.num_frames,
        "aborted": bool(trace.extra.get("aborted", False)),
        "bmf": bmf.tolist(),
        "gate_ratio": r,
        "gate_failed": failed,
        "plausibility": plaus.to_dict(),
    }
    columns = {
        "frame": list(range(1, full.num_frames + 1)),
        "bmf": bmf.tolist(),
        "mass_drift": plaus.mass_drift.tolist(),
        "impulse_irr": [""] * 2 + plaus.impulse_irr.tolist() if plaus.impulse_irr.size else [],
        "torque_irr": [""] * 2 + plaus.torque_irr.tolist() if plaus.torque_irr.size else [],
    }
    if args.ref:
        ref = read_trace(args.ref)
        drift = metrics.drift_report(trace, ref, reference=str(args.ref))
        report["drift"] = drift.to_dict()
        columns["comd"] = drift.comd_series.tolist()
        columns["mwrmsd"] = drift.mwrmsd_series.tolist()
    report_path = Path(args.report) if args.report else Path(args.trace) / "metrics.json"
    _write_json(report_path, report)
    csv_path = report_path.with_suffix(".csv")
    _write_csv(csv_path, columns)
    if args.figures:
        from . import plotting

        series = {k: np.asarray(v) for k, v in columns.items() if k in ("bmf", "comd", "mwrmsd")}
        plotting.plot_frame_series(series, trace.frame_interval, report_path.with_suffix(".png"), trace.scene)
    print(f"report -> {report_path} (series -> {csv_path})")
    return EXIT_OK


# -- ablate ----------------------------------------------------------------------


def cmd_ablate(args) -> int:
    cfg = _load(args)
    changes = {}
    if args.no_line_search:
        changes["line_search_enabled"] = False
    if args.fixed_forcing is not None:
        changes.update(forcing_mode="fixed", fixed_eta=args.fixed_forcing)
    variant = cfg.with_solver(**changes) if changes else cfg
    name = "noLS" if args.no_line_search else ("fixed" if args.fixed_forcing is not None else "base")
    out = Path(args.out) if args.out else default_out(f"{cfg.name}_ablate_{name}_k{args.dt_multiplier}")
    base_trace = run_simulation(cfg, "implicit", args.dt_multiplier)
    var_trace = run_simulation(variant, "implicit", args.dt_multiplier)
    write_trace(base_trace, out / "base")
    write_trace(var_trace, out / name)
    if not base_trace.telemetry or not var_trace.telemetry:
        print("error: a run produced no solver telemetry", file=sys.stderr)
        return EXIT_ABORT
    report = metrics.ablation_report(var_trace.telemetry, base_trace.telemetry)
    report.extra = {"variant": name, "k": args.dt_multiplier, "changes": changes}
    _write_json(out / "ablation.json", report.to_dict())
    _write_csv(out / "ablation.csv", {
        "run": ["base", name],
        "success_rate": [report.success_rate_base, report.success_rate],
        "rel_end": [report.rel_end_base, report.rel_end],
        "gmres_mean": [report.gmres_mean_base, report.gmres_mean],
        "gmres_max": [report.gmres_max_base, report.gmres_max],
    })
    if args.figures:
        from . import plotting

        plotting.plot_ablation(["base", name], [report.success_rate_base, report.success_rate],
                               out / "success.png", "frame success (%)")
    print(f"success {report.success_rate_base:.1f}% -> {report.success_rate:.1f}%, speedup {report.speedup:.2f}x"
          f" -> {out / 'ablation.json'}")
    aborted = base_trace.extra["aborted"] or var_trace.extra["aborted"]
    return EXIT_ABORT if aborted else EXIT_OK


# -- fill ------------------------------------------------------------------------


def cmd_fill(args) -> int:
    if args.resolution < 4:
        print("error: --resolution must be >= 4", file=sys.stderr)
        return EXIT_USAGE
    points = read_points(args.points)
    occ = voxelize(points, args.grid_lim, args.resolution)
    interior = classify_interior(occ)
    filled, _ = fill_particles(interior, points, MaterialParams(density=args.density), args.grid_lim)
    if filled.count == 0:
        print("warning: no interior voxels found, the fill is empty", file=sys.stderr)
    out = Path(args.out) if args.out else default_out("fill") / "filled.xyz"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_points(filled.position, out)
    print(f"{filled.count} interior particles -> {out}")
    return EXIT_OK


def cmd_scene(args) -> int:
    cfg = SCENES[args.name]()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out)
    print(f"{args.name} -> {out}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="impmpm", description="Implicit/explicit MPM simulation and trace metrics.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one simulation and write its trace")
    s.add_argument("--config", required=True)
    s.add_argument("--method", choices=("implicit", "explicit"), default="implicit")
    s.add_argument("--dt-multiplier", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("--figures", action="store_true", help="also render PNG figures")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="run a time-step multiplier sweep and the stability gate")
    s.add_argument("--config", required=True)
    s.add_argument("--method", choices=("implicit", "explicit"), default="implicit")
    s.add_argument("--multipliers", type=parse_multipliers, default=iter_multipliers())
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("metrics", help="compute trace metrics")
    s.add_argument("--trace", required=True)
    s.add_argument("--ref", help="reference trace for drift metrics")
    s.add_argument("--report", help="JSON report path (CSV series written alongside)")
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("ablate", help="compare a solver variant against the base solver")
    s.add_argument("--config", required=True)
    s.add_argument("--no-line-search", action="store_true")
    s.add_argument("--fixed-forcing", type=float, metavar="ETA")
    s.add_argument("--dt-multiplier", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("fill", help="fill the interior of a hollow point set")
    s.add_argument("--points", required=True)
    s.add_argument("--resolution", type=int, default=32)
    s.add_argument("--grid-lim", type=float, default=1.0)
    s.add_argument("--density", type=float, default=1000.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fill)

    s = sub.add_parser("scene", help="write a preset scene configuration")
    s.add_argument("name", choices=sorted(SCENES))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scene)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "dt_multiplier", 1) < 1:
        print("error: --dt-multiplier must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TraceFormatError, ParameterError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MPMError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
