"""Exception types raised across the package."""


class FunmixError(Exception):
    """Base class for all package errors."""


class InvalidKnotError(FunmixError, ValueError):
    pass


class DomainError(FunmixError, ValueError):
    pass


class UnsupportedDimensionError(FunmixError, ValueError):
    pass


class InvalidStateError(FunmixError, ValueError):
    pass


class NumericalError(FunmixError, ArithmeticError):
    """A factorization failed even after jitter was added."""


class ConstraintSingularError(NumericalError):
    pass


class RescaleDegenerateError(FunmixError, ValueError):
    pass


class DegenerateBandError(FunmixError, ValueError):
    pass


class UndefinedMetricError(FunmixError, ValueError):
    pass


class InvalidLadderError(FunmixError, ValueError):
    pass


class ConfigError(FunmixError, ValueError):
    """Bad run configuration or data file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
