"""Safe and resilient distributed secondary control of islanded AC microgrids."""

from .config import ConfigError, Finding, ScenarioConfig, load_bundled, load_config, validate
from .engine import GlobalState, SimLog, SimulationError, derivatives, run, step_rk4

__all__ = [
    "ConfigError",
    "Finding",
    "GlobalState",
    "ScenarioConfig",
    "SimLog",
    "SimulationError",
    "derivatives",
    "load_bundled",
    "load_config",
    "run",
    "step_rk4",
    "validate",
]
__version__ = "0.1.0"
