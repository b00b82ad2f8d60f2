"""PNG figures written next to the CSV reports (non-interactive backend)."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .calibration import CostRow, ExperimentTrace  # noqa: E402
from .thermal import ProbeSeries  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_probes(series: ProbeSeries, path, title: str = "",
                experiment: Optional[ExperimentTrace] = None) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    minutes = series.times / 60.0
    for i in range(series.temperatures.shape[1]):
        ax.plot(minutes, series.temperatures[:, i], lw=0.8, alpha=0.6, label=f"probe {i + 1}")
    ax.plot(minutes, series.mean, "k", lw=1.8, label="mean")
    if experiment is not None:
        ax.plot(experiment.times / 60.0, experiment.mean, "r--", lw=1.2, label="experiment")
    ax.set_xlabel("time [min]")
    ax.set_ylabel("temperature [°C]")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_fit(times: np.ndarray, sim: np.ndarray, experiment: ExperimentTrace, path,
             title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(experiment.times / 60.0, experiment.mean, ".", ms=1.5, color="0.5",
            label=experiment.specimen)
    ax.plot(times / 60.0, sim, "k", lw=1.5, label="fitted model")
    ax.set_xlabel("time [min]")
    ax.set_ylabel("mean temperature [°C]")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_cost_table(rows: Sequence[CostRow], path, title: str = "") -> Path:
    """Cost against ``h``; one marker series per ambient-temperature pair."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    groups: dict[tuple[float, float], list[CostRow]] = {}
    for r in rows:
        groups.setdefault((r.T_c_side, r.T_c_top), []).append(r)
    many = len(groups) > 8
    for (tcs, tct), rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda r: r.h)
        label = None if many else f"T_c side {tcs:g}, top {tct:g}"
        ax.plot([r.h for r in rs], [r.cost for r in rs], "o-", ms=3, lw=0.8, label=label)
    ax.set_xlabel("h [W/(m² K)]")
    ax.set_ylabel("RMSE [°C]")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(alpha=0.3, which="both")
    if not many:
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_comparison(report, path, title: str = "") -> Path:
    fig, (ax, bx) = plt.subplots(1, 2, figsize=(10, 4.0))
    for v in report.variants:
        if v.series is not None:
            ax.plot(v.series.times / 60.0, v.series.mean, lw=1.2, label=v.name)
    ax.set_xlabel("time [min]")
    ax.set_ylabel("probe mean [°C]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    names = [v.name for v in report.variants]
    bx.bar(range(len(names)), [v.wall_clock for v in report.variants], color="0.6")
    bx.set_xticks(range(len(names)), names, rotation=30, ha="right", fontsize=7)
    bx.set_ylabel("wall clock [s]")
    bx.set_yscale("log")
    fig.suptitle(title)
    return _save(fig, path)
