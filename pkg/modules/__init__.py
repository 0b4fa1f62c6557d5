"""
PFL Simulator - Library Modules
"""

from .datagen import Dataset, PartitionSpec, Scenario, load_scenario, partition, save_scenario, synth_gaussian
from .engine import RoundMetrics, RunConfig, Simulation, run_round, weighted_average
from .experiment import ExperimentConfig, run_experiment
from .privacy import DpConfig, dlg_invert, dp_privatize, psnr
from .report import build_report

__version__ = "1.0.0"

__all__ = [
    "Dataset",
    "PartitionSpec",
    "Scenario",
    "load_scenario",
    "partition",
    "save_scenario",
    "synth_gaussian",
    "RoundMetrics",
    "RunConfig",
    "Simulation",
    "run_round",
    "weighted_average",
    "ExperimentConfig",
    "run_experiment",
    "DpConfig",
    "dlg_invert",
    "dp_privatize",
    "psnr",
    "build_report",
]
