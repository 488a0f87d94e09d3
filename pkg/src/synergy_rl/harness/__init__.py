"""Experiment harness: spec-driven runs, evaluation, plots, CLI."""

from .evaluate import evaluate, load_policies
from .experiments import (
    ExperimentSpec,
    RunRecord,
    parse_spec,
    read_metrics_csv,
    run_experiment,
    write_metrics_csv,
)
from .plotting import aggregate_curves, plot_learning_curves

__all__ = [
    "ExperimentSpec",
    "RunRecord",
    "aggregate_curves",
    "evaluate",
    "load_policies",
    "parse_spec",
    "plot_learning_curves",
    "read_metrics_csv",
    "run_experiment",
    "write_metrics_csv",
]
