"""Synthetic benchmark, experiment orchestration, reports and the CLI."""

from .data import PairDataset, SyntheticSpec, generate_dataset, generate_splits
from .experiment import ExperimentResult, run_experiment, run_seeds
from .report import emit_report

__all__ = [
    "ExperimentResult",
    "PairDataset",
    "SyntheticSpec",
    "emit_report",
    "generate_dataset",
    "generate_splits",
    "run_experiment",
    "run_seeds",
]
