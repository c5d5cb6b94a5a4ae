from .config import DEFAULTS, ConfigError, load_config
from .cli import main

__all__ = ["DEFAULTS", "ConfigError", "load_config", "main"]
