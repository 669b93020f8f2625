"""Exception types shared across the package."""


class HeadliftError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(HeadliftError, ValueError):
    """A caller-supplied value violates an operation precondition."""


class InvariantViolationError(HeadliftError):
    """Two internally-produced values disagree (e.g. mismatched patch coords)."""


class ConfigurationError(HeadliftError):
    """A config file, checkpoint, or adapter is missing or inconsistent."""


class EmptyForegroundError(HeadliftError):
    """An image contains no foreground patches, so there is nothing to encode."""


class TrainingAbortedError(HeadliftError):
    """Training hit a NaN loss; carries the last good checkpoint path."""

    def __init__(self, message: str, last_good_checkpoint: str | None = None):
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint
