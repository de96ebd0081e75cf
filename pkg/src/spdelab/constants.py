"""Transportation-cost constants for the sup-norm and L2 settings.

``c_infinity``: constant for the additive-noise equation in the sup norm,
``2 * g_total * exp(2 * L_g^2 * T^2)``.

``c_two_alpha``: constant for bounded multiplicative noise in the L2 norm,
indexed by a Hoelder exponent alpha in (1, 2) with conjugate beta:

    T*D * 3^(2 - 1/beta) * K^2 * g_total
        * exp[T/beta * 3^(2*beta - 1) * L_sigma^(2*beta)
              * (g_alpha^(beta/alpha) + g_total^beta * T^(beta/alpha))]

Everything is assembled in log space.  Overflow is reported instead of
returning ``inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, NumericError, OptimizationError

ALPHA_BRACKET = (1.0 + 1e-3, 2.0 - 1e-3)
_LOG_MAX = math.log(np.finfo(float).max)
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LipschitzData:
    L_g: float = 0.0
    L_sigma: float = 0.0
    K_sigma: float = 1.0

    def __post_init__(self):
        for name in ("L_g", "L_sigma", "K_sigma"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise DomainError(f"{name} must be finite and nonnegative, got {v!r}")


@dataclass
class TciConstants:
    c_infinity: float
    c_two: dict = field(default_factory=dict)
    alpha_star: float | None = None
    c_two_star: float | None = None

    @staticmethod
    def beta(alpha: float) -> float:
        return conjugate(alpha)


def conjugate(alpha: float) -> float:
    """Hoelder conjugate beta with 1/alpha + 1/beta = 1."""
    if not (1.0 < alpha < 2.0):
        raise DomainError(f"alpha must lie in (1, 2), got {alpha!r}")
    return alpha / (alpha - 1.0)


def _exp_checked(log_value: float, what: str) -> float:
    if not math.isfinite(log_value) and log_value != -math.inf:
        raise NumericError(f"{what}: non-finite exponent {log_value!r}")
    if log_value > _LOG_MAX:
        raise NumericError(f"{what} overflows: log value {log_value:.6g} exceeds {_LOG_MAX:.6g}")
    return math.exp(log_value)


def c_infinity(g_total: float, L_g: float, T: float) -> float:
    """Sup-norm constant ``2 * g_total * exp(2 * L_g^2 * T^2)``."""
    for name, v in (("g_total", g_total), ("L_g", L_g), ("T", T)):
        if not (math.isfinite(v) and v >= 0):
            raise DomainError(f"{name} must be finite and nonnegative, got {v!r}")
    if g_total == 0:
        return 0.0
    exponent = 2.0 * L_g**2 * T**2
    return _exp_checked(math.log(2.0 * g_total) + exponent, f"C_inf (exponent {exponent:.6g})")


def log_c_two_alpha(data: LipschitzData, g_total: float, g_alpha: float, T: float,
                    D: float, alpha: float) -> float:
    """Natural log of :func:`c_two_alpha`; finite even where the value overflows."""
    beta = conjugate(alpha)
    if data.K_sigma <= 0:
        raise DomainError("K_sigma must be > 0 for the L2 constant")
    if g_total <= 0 or g_alpha < 0 or T <= 0 or D <= 0:
        raise DomainError("g_total, T, D must be positive and g_alpha nonnegative")
    prefactor = (math.log(T * D) + (2.0 - 1.0 / beta) * math.log(3.0)
                 + 2.0 * math.log(data.K_sigma) + math.log(g_total))
    if data.L_sigma == 0:
        return prefactor
    # both inner terms underflow for alpha near 1 (beta large), so add them in logs
    log_ga = (beta / alpha) * math.log(g_alpha) if g_alpha > 0 else -math.inf
    log_inner = np.logaddexp(log_ga, beta * math.log(g_total) + (beta / alpha) * math.log(T))
    log_exponent = (math.log(T / beta) + (2 * beta - 1) * math.log(3.0)
                    + 2 * beta * math.log(data.L_sigma) + float(log_inner))
    if log_exponent > _LOG_MAX:
        return math.inf
    return prefactor + math.exp(log_exponent)


def c_two_alpha(data: LipschitzData, g_total: float, g_alpha: float, T: float, D: float,
                alpha: float) -> float:
    """L2-norm constant for a given alpha in (1, 2).

    Raises:
        DomainError: alpha outside (1, 2) or K_sigma = 0.
        NumericError: the value overflows double precision.
    """
    log_c = log_c_two_alpha(data, g_total, g_alpha, T, D, alpha)
    return _exp_checked(log_c, f"C_2,alpha at alpha={alpha:.6g}")


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-7,
                   max_iter: int = 200) -> tuple[float, float]:
    """Minimise a unimodal ``f`` on [lo, hi]; returns (argmin, min)."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def optimize_alpha(data: LipschitzData, g_total: float, g_alpha: Callable[[float], float],
                   T: float, D: float, bracket=ALPHA_BRACKET) -> tuple[float, float]:
    """Minimise C_2,alpha over alpha in ``bracket``.

    ``g_alpha`` maps alpha to the kernel functional (e.g. a bound
    ``functools.partial(g_const_alpha, table)``).  The search runs on
    log C; the better endpoint wins if it beats the interior point.

    Returns:
        (alpha_star, C_2 at alpha_star)

    Raises:
        OptimizationError: log C is infinite across the whole bracket.
    """

    def objective(alpha):
        try:
            v = log_c_two_alpha(data, g_total, g_alpha(alpha), T, D, alpha)
        except NumericError:
            return math.inf
        return v if math.isfinite(v) else math.inf

    lo, hi = bracket
    candidates = [(objective(lo), lo), (objective(hi), hi)]
    a_in, f_in = golden_section(objective, lo, hi)
    candidates.append((f_in, a_in))
    f_best, a_best = min(candidates)
    if not math.isfinite(f_best) or f_best > _LOG_MAX:
        raise OptimizationError(f"C_2,alpha overflows for every alpha in [{lo}, {hi}] "
                                f"(best log value {f_best:.6g})")
    return a_best, _exp_checked(f_best, f"C_2,alpha at alpha={a_best:.6g}")


def concentration_bound(C: float, r: float) -> tuple[float, float]:
    """Return (exp(-r^2/(8C)), r0) with r0 = 2*sqrt(2*C*ln 2).

    The bound on the concentration function is only valid for r >= r0.
    """
    if not (C > 0):
        raise DomainError(f"C must be positive, got {C!r}")
    return math.exp(-(r**2) / (8.0 * C)), 2.0 * math.sqrt(2.0 * C * math.log(2.0))


def mgf_bound(C: float, a):
    """Sub-Gaussian MGF bound exp(a^2 C / 2); accepts scalars or arrays."""
    if not (C > 0):
        raise DomainError(f"C must be positive, got {C!r}")
    return np.exp(np.square(a) * C / 2.0)
