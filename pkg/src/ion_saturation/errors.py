"""
Exception hierarchy for the ion saturation toolkit.

Every error carries the process exit code the CLI uses when it escapes a
command: 2 for configuration problems, 3 for bad data, 4 for numerical failure.
"""
from typing import Any


class IonSaturationError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(IonSaturationError):
    """Invalid configuration. The message names the offending dotted field."""

    exit_code = 2

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class InvalidInputError(IonSaturationError, ValueError):
    """A precondition of a library operation was violated."""

    exit_code = 3


class DataFormatError(IonSaturationError):
    """Malformed input file."""

    exit_code = 3

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InconsistentBudgetError(IonSaturationError):
    """Measured coupling exceeds what the geometric budget allows."""

    exit_code = 3


class PeakTruncatedError(IonSaturationError):
    """A profile has no half-maximum crossing on one side of its peak."""

    exit_code = 3


class NoBlurNeededError(IonSaturationError):
    """The measured width is already narrower than the predicted one."""

    exit_code = 3


class NumericalFailureError(IonSaturationError):
    """A numerical procedure did not converge."""

    exit_code = 4

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class NoSolutionError(IonSaturationError):
    """A requested value cannot be attained."""

    exit_code = 4


class FitError(IonSaturationError):
    """Saturation fit failure."""

    exit_code = 4


class FitConvergenceError(FitError):
    """The fit hit its iteration limit. `result` holds the last iterate."""

    def __init__(self, message: str, result: Any = None):
        self.result = result
        super().__init__(message)


class DegenerateDataError(FitError):
    """The weighted normal matrix is singular."""


class EmptyMapError(IonSaturationError):
    """No pixel of a scan could be fitted."""

    exit_code = 4
