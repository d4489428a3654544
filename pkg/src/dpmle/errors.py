"""Exception hierarchy shared by the library and the CLI."""


class DPMLEError(Exception):
    """Base class for all package errors."""


class DimensionError(DPMLEError, ValueError):
    pass


class NumericError(DPMLEError, ArithmeticError):
    pass


class DomainError(DPMLEError, ValueError):
    pass


class UnderflowError(NumericError):
    """Every state assigns zero density to an observation."""

    def __init__(self, series, t):
        super().__init__(f"zero likelihood under all states in series {series} at t={t}")
        self.series = series
        self.t = t


class SingularChainError(NumericError):
    """``I - Gamma + U`` is not invertible (reducible chain)."""


class ConvergenceError(DPMLEError):
    """An optimiser stopped without meeting its tolerance.

    ``best`` carries the best iterate seen so callers can still use it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class FittingError(DPMLEError):
    pass


class SearchError(DPMLEError):
    pass


class ConfigError(DPMLEError, ValueError):
    pass


class ParseError(DPMLEError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
