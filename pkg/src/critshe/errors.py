"""Exception hierarchy shared by every module of the package."""


class Error(Exception):
    """Base class for all package errors."""

    error_class = "error"


class DomainError(Error, ValueError):
    """An argument lies outside the domain where the operation is defined."""

    error_class = "domain"


class NumericalError(Error, ArithmeticError):
    """A quadrature or series evaluation failed to reach its tolerance."""

    error_class = "numerical"


class HeavyTailError(DomainError):
    """Requested moment order is too heavy-tailed for Monte Carlo."""

    error_class = "heavy-tail"


class UnreliableEstimateError(Error):
    """An estimator's own diagnostics say its result should not be trusted."""

    error_class = "unreliable"

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class SimulationBlowUpError(Error):
    """A lattice field left the representable range."""

    error_class = "blow-up"

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step
