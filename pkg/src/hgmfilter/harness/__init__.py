"""Configuration, experiment orchestration, reporting and the command line."""

from .config import ExperimentConfig, dumps_config, load_config, loads_config
from .experiment import ExperimentReport, run_experiment
from .plot import plot_report

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "dumps_config",
    "load_config",
    "loads_config",
    "plot_report",
    "run_experiment",
]
