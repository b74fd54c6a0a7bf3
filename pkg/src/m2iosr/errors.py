"""Exception types raised across the package."""


class M2IOSRError(Exception):
    """Base class for all package errors."""


class ConfigError(M2IOSRError, ValueError):
    """Invalid configuration, shapes or arguments."""


class NumericError(M2IOSRError, ArithmeticError):
    """A tensor that must be finite is not."""


class CheckpointError(M2IOSRError):
    """Checkpoint archive could not be written, read or matched to a model."""


class DataError(M2IOSRError):
    """Dataset missing on disk or malformed."""
