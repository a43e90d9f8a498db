"""Exception types shared across the package."""


class CadError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CadError, ValueError):
    """A parameter or configuration value is outside its allowed range."""


class DomainError(CadError, ValueError):
    """An input violates a precondition (shape, index, or value domain)."""


class NumericalDomainError(CadError, ArithmeticError):
    """A linear-algebra update left the numerically safe regime."""


class TrialAbort(CadError):
    """A Monte-Carlo trial aborted mid-run; carries whatever trace exists."""

    def __init__(self, cause: Exception, partial_trace=None):
        super().__init__(f"trial aborted: {cause}")
        self.cause = cause
        self.partial_trace = partial_trace
