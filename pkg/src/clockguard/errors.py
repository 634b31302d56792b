"""Exception types shared across the package."""


class ClockGuardError(Exception):
    """Base class for all package errors."""


class InvalidArgument(ClockGuardError, ValueError):
    """An argument is outside the documented domain of an operation."""


class ContractViolation(ClockGuardError, ValueError):
    """A caller broke an ordering or shape contract (e.g. non-monotone epochs)."""


class NumericalFailure(ClockGuardError, ArithmeticError):
    """A computation produced a non-finite or non-positive quantity."""


class TraceFormatError(ClockGuardError, ValueError):
    """A trace or config file could not be parsed.

    ``line`` is the 1-based line number of the offending row, when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StageError(ClockGuardError, RuntimeError):
    """A scenario pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
