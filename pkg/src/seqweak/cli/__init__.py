"""Command-line experiment driver."""

from .config import ConfigError, ExperimentConfig, parse_config, validate_config
from .main import RunResult, main, run_experiment

__all__ = ["ConfigError", "ExperimentConfig", "RunResult", "main", "parse_config", "run_experiment", "validate_config"]
