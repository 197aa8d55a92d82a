"""Exception types shared across the package."""


class SmalltimeError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(SmalltimeError, ValueError):
    """An argument violates a documented precondition."""


class NumericalDegeneracyError(SmalltimeError, RuntimeError):
    """A factorization or linear solve failed beyond recoverable jitter."""


class BlowUpError(SmalltimeError, RuntimeError):
    """A solver state exceeded the blow-up guard."""

    def __init__(self, message, cell_index=None):
        super().__init__(message)
        self.cell_index = cell_index


class CapabilityError(SmalltimeError, RuntimeError):
    """Requested computation needs derivative orders beyond what is available."""


class DivergenceError(SmalltimeError, RuntimeError):
    """A quadrature value keeps growing under grid refinement."""


class NonConvergenceError(SmalltimeError, RuntimeError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StarvationError(SmalltimeError, RuntimeError):
    """A Monte Carlo estimator received no effective sample mass."""


class ConfigError(SmalltimeError, ValueError):
    """A run configuration is malformed or inconsistent."""
