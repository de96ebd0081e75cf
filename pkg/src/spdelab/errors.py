"""Exception hierarchy shared by all spdelab modules."""


class SpdelabError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(SpdelabError, ValueError):
    """Invalid grid, shape mismatch, bad config file or unsupported size."""


class AssumptionViolation(SpdelabError, ValueError):
    """Coefficients violate a standing structural assumption (a > 0, |sigma| <= K, ...)."""


class DomainError(SpdelabError, ValueError):
    """Parameter outside the domain where a formula is defined."""


class NumericError(SpdelabError, ArithmeticError):
    """Non-finite values, overflow, ill-conditioning or non-convergence."""


class BlowUpError(NumericError):
    """A replica left the finite range during time stepping."""

    def __init__(self, message, step=None, node=None, replica=None):
        super().__init__(message)
        self.step = step
        self.node = node
        self.replica = replica


class RegressionError(NumericError):
    """Least-squares projection is rank deficient."""


class OptimizationError(NumericError):
    """Minimisation failed on the whole bracket."""
