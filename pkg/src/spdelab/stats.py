"""Monte Carlo summaries: standard errors and nonparametric bootstrap."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

BOOTSTRAP_SALT = 0xB0075

@dataclass(frozen=True)
class Estimate:
    """Point estimate with standard error and a two-sided confidence interval."""

    value: float
    se: float
    lo: float
    hi: float

    def to_dict(self):
        return asdict(self)

    @classmethod
    def exact(cls, value: float) -> "Estimate":
        return cls(float(value), 0.0, float(value), float(value))


def bootstrap_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed & (2**64 - 1),
                                                                         BOOTSTRAP_SALT])))


def bootstrap(stat: Callable[..., np.ndarray], *samples: np.ndarray, n_boot: int = 1000,
              level: float = 0.95, seed: int = 0) -> Estimate:
    """Percentile bootstrap of ``stat`` over replicas (axis 0 of every sample).

    ``stat`` receives resampled arrays with a leading bootstrap axis, i.e.
    arrays of shape (n_boot, R, ...), and must reduce over axis 1.
    """
    samples = [np.asarray(s, dtype=float) for s in samples]
    R = samples[0].shape[0]
    point = float(stat(*[s[None] for s in samples])[0])
    if R < 2 or n_boot < 2:
        return Estimate(point, 0.0, point, point)
    idx = bootstrap_rng(seed).integers(0, R, size=(n_boot, R))
    reps = np.asarray(stat(*[s[idx] for s in samples]), dtype=float)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(reps, [tail, 1.0 - tail])
    return Estimate(point, float(np.std(reps, ddof=1)), float(lo), float(hi))


def mean_estimate(x: np.ndarray, level: float = 0.95) -> Estimate:
    """Sample mean with a normal-approximation interval."""
    from scipy.stats import norm

    x = np.asarray(x, dtype=float)
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    z = float(norm.ppf(0.5 + level / 2.0))
    return Estimate(m, se, m - z * se, m + z * se)
