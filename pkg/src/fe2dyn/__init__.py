"""Implicit dynamic FE² homogenization for layered 1D bars at finite strain."""

from fe2dyn.errors import (
    ConfigError,
    IllPosedError,
    InvertedElementError,
    MacroDivergenceError,
    MicroDivergenceError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "IllPosedError",
    "InvertedElementError",
    "MacroDivergenceError",
    "MicroDivergenceError",
    "__version__",
]
