"""Exception types shared across the package."""


class MagnusCtlError(Exception):
    """Base class for all package errors."""


class DimensionError(MagnusCtlError, ValueError):
    """Raised when operator/state dimensions are inconsistent or exceed the cap."""


class NumericalError(MagnusCtlError, ArithmeticError):
    """Raised when a numerical kernel fails to converge.

    Attributes
    ----------
    residual : float
        Estimate of the remaining error when the kernel gave up.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class ConfigError(MagnusCtlError, ValueError):
    """Raised for invalid run configurations, including the step-size guard."""


class UnsupportedStructureError(MagnusCtlError, ValueError):
    """Raised when a fast path is asked to handle couplings it cannot represent."""


class OptimizationError(MagnusCtlError, RuntimeError):
    """Wraps a forward-model failure with the optimizer iteration it occurred at."""

    def __init__(self, message, iteration):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
