"""Experiment configuration, verification suites and the CLI."""

from .config import COMMANDS, ConfigError, ExperimentConfig, default_config, load_config
from .experiments import COMMAND_FUNCS, run_command
from .report import Check, Report, write_outputs

__all__ = [
    "COMMANDS",
    "COMMAND_FUNCS",
    "Check",
    "ConfigError",
    "ExperimentConfig",
    "Report",
    "default_config",
    "load_config",
    "run_command",
    "write_outputs",
]
