"""Experiment orchestration and command-line interface."""

from .config import ExperimentConfig
from .experiment import (
    RunRecord,
    cluster_eval,
    compare_assignment,
    h_sweep,
    run_experiment,
    sweep,
    uplink_bytes,
)

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "cluster_eval",
    "compare_assignment",
    "h_sweep",
    "run_experiment",
    "sweep",
    "uplink_bytes",
]
