"""Monte Carlo and quadrature toolkit for transportation-cost inequalities of the
stochastic heat equation driven by space-time white noise."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AssumptionViolation,
    BlowUpError,
    ConfigurationError,
    DomainError,
    NumericError,
    OptimizationError,
    RegressionError,
    SpdelabError,
)

__all__ = [
    "__version__",
    "AssumptionViolation",
    "BlowUpError",
    "ConfigurationError",
    "DomainError",
    "NumericError",
    "OptimizationError",
    "RegressionError",
    "SpdelabError",
]
