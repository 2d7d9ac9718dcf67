"""Reasoning-trace regions of interest and AiR-E attention evaluation."""

from airkit.errors import (
    AirkitError,
    ProgramError,
    SceneError,
    UndefinedCorrelationError,
)

__version__ = "0.1.0"

__all__ = [
    "AirkitError",
    "ProgramError",
    "SceneError",
    "UndefinedCorrelationError",
    "__version__",
]
