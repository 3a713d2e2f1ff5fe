"""Exception types shared across the package."""


class ConvergenceError(RuntimeError):
    """A truncated series failed to meet its tail bound.

    Carries the achieved relative bound so callers can decide whether the
    partial result is usable.
    """

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class NumericalError(RuntimeError):
    """Adaptive quadrature failed to converge; carries the best estimate."""

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class LikelihoodZeroError(RuntimeError):
    """All forward variables vanished: the observation at ``index`` is
    impossible under the supplied parameters and state constraints."""

    def __init__(self, index):
        super().__init__(
            f"likelihood is exactly zero at observation index {index}"
        )
        self.index = index


class ParseError(ValueError):
    """Track file could not be parsed; ``row`` is the offending data row."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row
