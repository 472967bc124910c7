"""Depth-guided adaptive queries for RGB-D video salient object detection."""

from .config import Config, ConfigError, load_config, preset
from .model import SamDaq

__all__ = ["Config", "ConfigError", "SamDaq", "load_config", "preset"]
__version__ = "0.1.0"
