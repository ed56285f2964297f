"""Exception hierarchy shared by all modules."""


class CylMeasureError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgumentError(CylMeasureError, ValueError):
    pass


class ResolutionError(CylMeasureError):
    """A grid or truncation is too coarse for the requested accuracy."""


class DomainError(CylMeasureError, ValueError):
    """A point or parameter lies outside the region where a formula is defined."""


class PoleError(DomainError):
    pass


class ConditioningError(CylMeasureError, ArithmeticError):
    """A matrix is singular at working precision."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NumericalOverflowError(CylMeasureError, ArithmeticError):
    pass


class InstabilityError(CylMeasureError, ArithmeticError):
    """A time integrator diverged."""


class ConvergenceError(CylMeasureError):
    """Markov chains failed a convergence diagnostic."""


class ReweightingError(CylMeasureError):
    """Importance weights collapsed onto too few draws."""


class UndersampledError(CylMeasureError):
    pass
