class GpSobolError(Exception):
    """Base class for errors raised by gpsobol."""


class DegenerateDesignError(GpSobolError, ValueError):
    """Learning sample cannot support a Gaussian-process fit."""


class DegenerateVarianceError(GpSobolError, ValueError):
    """A variance used as a denominator vanishes."""


class NumericalError(GpSobolError, ArithmeticError):
    """Round-off beyond the tolerated level (e.g. a covariance that is not PSD)."""


class NotConvergedError(GpSobolError, RuntimeError):
    """An iterative refinement hit its cap before meeting the tolerance."""

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail or {}
