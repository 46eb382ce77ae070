"""Exception hierarchy shared by every module.

CLI exit codes are derived from the class: ``ConfigError`` maps to 2,
everything else under ``DiscoError`` maps to 3.
"""


class DiscoError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class ConfigError(DiscoError, ValueError):
    """Invalid configuration or incompatible settings."""

    exit_code = 2


class InputError(DiscoError, ValueError):
    """Malformed data handed to an operation (shape, range, finiteness)."""


class UnsupportedError(DiscoError, NotImplementedError):
    """Operation is not available for this kind of object."""


class DegenerateParameterError(DiscoError, ValueError):
    """A parameter projection hit a singular case (e.g. a zero column)."""


class DegenerateVariationError(DiscoError, ValueError):
    """One or more variation vectors were identically zero.

    ``indices`` lists the offending rows so the caller can resample them.
    """

    def __init__(self, indices, message=None):
        self.indices = list(indices)
        super().__init__(message or f"zero variation at rows {self.indices}")


class BatchError(DiscoError, RuntimeError):
    """A contrast batch could not be realized within the resample budget."""


class MetricError(DiscoError, RuntimeError):
    """A metric could not be computed from the given data."""


class TrainingError(DiscoError, RuntimeError):
    """Training diverged (non-finite loss) or otherwise aborted."""
