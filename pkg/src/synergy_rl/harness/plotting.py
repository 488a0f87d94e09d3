"""Learning-curve figures: mean line per method, +-1 std band across seeds.

Runs inside a group may disagree on their env-step grids (different
worker counts or budgets).  We resample every curve onto the coarsest
grid in the group (the one with the fewest rows) by linear
interpolation, then aggregate; the aggregated numbers are also written
as a CSV so the band edges can be checked without parsing the figure.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ..errors import ConfigurationError
from .experiments import _fmt, read_metrics_csv


def aggregate_curves(
    paths: Sequence[str | Path], column: str = "success_rate"
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(grid, mean, std) for one group of runs, resampled as documented."""
    if not paths:
        raise ConfigurationError("no metric files to aggregate")
    runs = [read_metrics_csv(p) for p in paths]
    for p, cols in zip(paths, runs):
        if column not in cols:
            raise ConfigurationError(f"{p} has no column {column!r}")
        if cols["env_steps"].shape[0] == 0:
            raise ConfigurationError(f"{p} has no metric rows")
    grid = min((c["env_steps"] for c in runs), key=lambda g: g.shape[0])
    resampled = np.stack([np.interp(grid, c["env_steps"], c[column]) for c in runs])
    return grid, resampled.mean(axis=0), resampled.std(axis=0)


def write_aggregate_csv(
    groups: Mapping[str, tuple[np.ndarray, np.ndarray, np.ndarray]], path: str | Path
) -> None:
    lines = ["# synergy-rl aggregated curves csv v1", "label,env_steps,mean,std"]
    for label, (grid, mean, std) in groups.items():
        for x, m, s in zip(grid, mean, std):
            lines.append(f"{label},{int(x)},{_fmt(m)},{_fmt(s)}")
    Path(path).write_text("\n".join(lines) + "\n")


def plot_learning_curves(
    run_groups: Mapping[str, Sequence[str | Path]],
    out_svg: str | Path,
    out_csv: str | Path | None = None,
    column: str = "success_rate",
    title: str | None = None,
) -> Path:
    """One figure for a set of labeled groups; returns the figure path."""
    if not run_groups:
        raise ConfigurationError("nothing to plot")
    aggregated = {label: aggregate_curves(paths, column) for label, paths in run_groups.items()}

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, (grid, mean, std) in aggregated.items():
        (line,) = ax.plot(grid, mean, label=label)
        ax.fill_between(grid, mean - std, mean + std, alpha=0.2, color=line.get_color())
    ax.set_xlabel("env steps")
    ax.set_ylabel(column.replace("_", " "))
    ax.set_xlim(0, max(float(g[-1]) for g, _, _ in aggregated.values()))
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    out_svg = Path(out_svg)
    fig.savefig(out_svg, format="svg")
    plt.close(fig)

    if out_csv is not None:
        write_aggregate_csv(aggregated, out_csv)
    return out_svg
