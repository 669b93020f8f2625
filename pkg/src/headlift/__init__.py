"""Single-image head reconstruction with 3D gaussian rendering."""

__version__ = "0.1.0"

from .errors import (ConfigurationError, EmptyForegroundError, HeadliftError,
                     InvalidArgumentError, InvariantViolationError,
                     TrainingAbortedError)

__all__ = [
    "ConfigurationError", "EmptyForegroundError", "HeadliftError",
    "InvalidArgumentError", "InvariantViolationError", "TrainingAbortedError",
    "__version__",
]
