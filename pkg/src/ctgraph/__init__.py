"""Anatomy-aware hierarchical graph attention over volumetric CT features."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    CtGraphError,
    FormatError,
    ShapeError,
    ValidationError,
)
from .tensor import Tensor

__all__ = [
    "Tensor",
    "CtGraphError",
    "ShapeError",
    "FormatError",
    "ValidationError",
    "ConfigError",
    "__version__",
]
