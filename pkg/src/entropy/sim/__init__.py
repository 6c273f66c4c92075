"""Discrete-event simulation of Entropy and a replicated baseline."""

from .baseline import BaselineSim, run_baseline
from .config import HOURS_PER_YEAR, AttackerConfig, SimConfig, SimMetrics
from .engine import EntropySim, run_entropy
from .experiments import (byzantine_sweep, linear_fit, loss_onset, mean_by, repair_traffic_sweep,
                          targeted_sweep, trace_runs, write_csv, write_manifest)

__all__ = [
    "AttackerConfig", "BaselineSim", "EntropySim", "HOURS_PER_YEAR", "SimConfig", "SimMetrics",
    "byzantine_sweep", "linear_fit", "loss_onset", "mean_by", "repair_traffic_sweep",
    "run_baseline", "run_entropy", "targeted_sweep", "trace_runs", "write_csv", "write_manifest",
]
