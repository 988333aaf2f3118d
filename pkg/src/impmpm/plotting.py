"""Optional figures for CLI reports (written to files, never shown)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "axes.labelsize": 10,
    "font.size": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.5,
    "lines.markersize": 4,
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_frame_series(series: Mapping[str, np.ndarray], frame_interval: float, path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, values in series.items():
            values = np.asarray(values)
            if values.size == 0:
                continue
            t = frame_interval * np.arange(1, values.size + 1)
            ax.plot(t, values, marker="o", label=name)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("value")
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_center_of_mass(com: np.ndarray, frame_interval: float, path, title: str = "") -> Path:
    com = np.asarray(com)
    t = frame_interval * np.arange(1, com.shape[0] + 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for axis, name in enumerate("xyz"):
            ax.plot(t, com[:, axis], label=f"c_{name}")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("center of mass (m)")
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_sweep(ks: Sequence[int], curves: Mapping[str, Sequence[float]], passed: Sequence[bool], path,
               ylabel: str = "drift (normalized)") -> Path:
    ks = np.asarray(ks)
    ok = np.asarray(passed, dtype=bool)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, values in curves.items():
            values = np.asarray(values, dtype=float)
            line, = ax.plot(ks, values, marker="o", label=name)
            if (~ok).any():
                ax.plot(ks[~ok], values[~ok], "x", color=line.get_color(), markersize=8)
        ax.set_xlabel("time-step multiplier k")
        ax.set_ylabel(ylabel)
        ax.legend(title="x = gate failed" if (~ok).any() else None)
        return _save(fig, path)


def plot_ablation(labels: Sequence[str], values: Sequence[float], path, ylabel: str) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(list(labels), list(values), color=["#2b8cbe", "#e34a33", "#31a354"][: len(labels)])
        ax.set_ylabel(ylabel)
        return _save(fig, path)
