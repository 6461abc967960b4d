"""Exception types shared across the package.

The CLI maps these onto exit codes: config problems exit 2, training and
numeric failures exit 3, file problems exit 4.
"""


class LorascError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(LorascError):
    """Operands have incompatible or invalid dimensions."""


class ArgumentError(LorascError):
    """A scalar argument is outside its legal range."""


class NumericError(LorascError):
    """A numeric contract was violated: non-finite values, failed decomposition."""


class ConfigError(LorascError):
    """Unknown, missing, or ill-typed configuration."""


class TrainingError(LorascError):
    """Training diverged or broke a runtime contract mid-run."""


class DataError(LorascError):
    """Dataset construction or file ingestion failed."""


class CheckpointError(LorascError):
    """Checkpoint file is malformed, truncated, or from an unknown version."""
