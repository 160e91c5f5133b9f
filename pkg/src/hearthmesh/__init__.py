"""Discrete-event simulator for offline voice-controlled smart homes."""
from .home import ConfigError, HomeConfig, load_config, load_config_file
from .kernels import BACKEND
from .sim import MetricsReport, Scenario, Simulation, load_scenario, load_scenario_file, run, run_matrix

__version__ = "0.1.0"

__all__ = ["BACKEND", "ConfigError", "HomeConfig", "MetricsReport", "Scenario", "Simulation", "load_config",
           "load_config_file", "load_scenario", "load_scenario_file", "run", "run_matrix", "__version__"]
