"""Proxy-assisted peer-to-peer video-on-demand: replication, placement, churn and replica reliability."""

from .config import SimConfig, load_config
from .engine import Simulation, run, run_seeds
from .metrics import MetricsReport, merge, to_csv
from .reliability import CtmcParams, mean_time_to_failure

__all__ = [
    "CtmcParams", "MetricsReport", "SimConfig", "Simulation", "load_config",
    "mean_time_to_failure", "merge", "run", "run_seeds", "to_csv",
]
__version__ = "0.1.0"
