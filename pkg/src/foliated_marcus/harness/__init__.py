"""Configuration, deterministic parallel execution and report emission."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .runner import run

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "run"]
