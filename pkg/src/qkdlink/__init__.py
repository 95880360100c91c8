"""Simulation and analysis toolkit for a three-state one-decoy polarization QKD link."""
from .config import ScenarioConfig, load_config, parse_ini, to_ini
from .keyrate import CountsTable, KeyRateReport, SecurityParams, analyze
from .presets import preset
from .runner import RunReport, run_scenario, sweep_loss
from .sync import ClockSolution, Qubit4Sync, SyncError

__version__ = "0.1.0"

__all__ = [
    "ClockSolution",
    "CountsTable",
    "KeyRateReport",
    "Qubit4Sync",
    "RunReport",
    "ScenarioConfig",
    "SecurityParams",
    "SyncError",
    "analyze",
    "load_config",
    "parse_ini",
    "preset",
    "run_scenario",
    "sweep_loss",
    "to_ini",
]
