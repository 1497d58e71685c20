"""Desk-scale simulator of personalized federated multi-modal learning."""

from .config import RunConfig, config_from_dict, config_to_dict, load_config
from .orchestrator import RunResult, Simulation, run_training
from .recipes import desk_config, recipe_suite

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "RunResult", "Simulation",
    "config_from_dict", "config_to_dict", "load_config",
    "run_training", "desk_config", "recipe_suite",
    "__version__",
]
