"""Exception types shared across the package."""


class ImplicitPathsError(Exception):
    """Base class for all package errors."""


class ParameterError(ImplicitPathsError, ValueError):
    pass


class DataError(ImplicitPathsError, ValueError):
    pass


class ConvergenceError(ImplicitPathsError):
    """An iterative method hit its cap before certifying its result.

    ``best`` carries the best iterate found and ``residual`` its certificate
    value, so callers can still inspect what was reached.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class SolverError(ImplicitPathsError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DescentViolation(ImplicitPathsError):
    def __init__(self, message, step=None, residual=None, trace=None):
        super().__init__(message)
        self.step = step
        self.residual = residual
        self.trace = trace


class CoverageError(ImplicitPathsError):
    pass


class StaleInputError(ImplicitPathsError):
    pass


class InconclusiveError(ImplicitPathsError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
