"""Cavity-assisted one-axis twisting: closed forms, open-system engine and scenario runner."""

__version__ = "0.1.0"

from .errors import CavityOATError, ConfigError, EngineError  # noqa: E402
from .model import ModelParams, PhotonInput  # noqa: E402

__all__ = ["CavityOATError", "ConfigError", "EngineError", "ModelParams", "PhotonInput", "__version__"]
