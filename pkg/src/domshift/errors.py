"""Exception types shared across the package."""


class DomShiftError(Exception):
    """Base class for all package errors."""


class ShapeError(DomShiftError, ValueError):
    """Raised when an array does not have the shape an operation needs.

    ``dim`` names the offending dimension (e.g. ``"channels"``).
    """

    def __init__(self, message, dim=None):
        super().__init__(message)
        self.dim = dim


class ConfigError(DomShiftError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class DataError(DomShiftError):
    """Problem reading or writing image data; ``path`` is the offending file."""

    def __init__(self, message, path=None):
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class WeightsError(DataError):
    """Corrupt, truncated or incompatible weight file."""


class TrainingError(DomShiftError):
    """Training diverged (non-finite loss) or could not proceed."""


class StageError(DomShiftError):
    """A stage of the experiment pipeline failed."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
