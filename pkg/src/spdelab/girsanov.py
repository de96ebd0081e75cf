"""Girsanov drifts, entropy, and the coupling experiments.

A drift X defines a tilted measure under which ``W~ = W - int int X`` is a
Brownian sheet.  Its relative entropy with respect to the untilted law is
``E~ ||X||^2_{T,2} / 2``.  The experiments sample W~ directly, run the
coupled pair (drifted u, driftless v) on it, and compare the coupling
distance with ``sqrt(2 C * entropy)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .constants import LipschitzData
from .errors import ConfigurationError, NumericError
from .grid import Grid, NoiseSheet, SeedSpec, sample_noise_batch
from .kernel import KernelTable
from .parallel import DEFAULT_CHUNK, map_chunks
from .presets import lookup_preset
from .solver import ModelSpec, batch_l2_norm_sq, integrate, point_values
from .stats import Estimate, bootstrap

_LOG_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class DriftSpec:
    """Adapted drift X(t, x, u).

    ``kind`` is ``constant`` (uses ``value``), ``deterministic`` (``fn(t, x)``)
    or ``feedback`` (``fn(t, x, u_now)``, where ``u_now`` is the current slice
    of the drifted path; later slices are never exposed).
    """

    kind: str = "constant"
    value: float = 0.0
    fn: Callable | None = None
    cap: float = math.inf
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("constant", "deterministic", "feedback"):
            raise ConfigurationError(f"unknown drift kind {self.kind!r}")
        if self.kind != "constant" and self.fn is None:
            raise ConfigurationError(f"{self.kind} drift needs a function")
        if not self.cap > 0:
            raise ConfigurationError("drift cap must be positive")

    @classmethod
    def constant(cls, c: float, cap: float = math.inf) -> "DriftSpec":
        return cls("constant", float(c), None, cap, f"constant({c})")

    @property
    def is_deterministic(self) -> bool:
        return self.kind != "feedback"

    @property
    def is_zero(self) -> bool:
        return self.kind == "constant" and self.value == 0.0

    def evaluate(self, i: int, t: float, x: np.ndarray, history: np.ndarray) -> np.ndarray:
        """Drift on the current slice; ``history`` is (R, i+1, nx), read-only."""
        R = history.shape[0]
        if self.kind == "constant":
            X = np.full((R, x.size), self.value)
        elif self.kind == "deterministic":
            X = np.broadcast_to(np.asarray(self.fn(t, x), dtype=float), (R, x.size))
        else:
            X = np.asarray(self.fn(t, x, history[:, -1]), dtype=float)
        self._validate(X, i)
        return X

    def _validate(self, X, i):
        bad = ~np.isfinite(X)
        if bad.any():
            raise NumericError(f"drift {self.name or self.kind}: non-finite value at step {i}")
        if np.max(np.abs(X)) > self.cap * (1 + 1e-12):
            raise NumericError(f"drift {self.name or self.kind}: |X| exceeds cap {self.cap} "
                               f"at step {i}")

    def on_grid(self, grid: Grid) -> np.ndarray:
        """Values on all cells, shape (nt, nx); not available for feedback drifts."""
        if not self.is_deterministic:
            raise ConfigurationError("feedback drifts have no path-independent grid values")
        empty = np.zeros((1, 1, grid.nx))
        X = np.stack([self.evaluate(i, t, grid.centers, empty)[0]
                      for i, t in enumerate(grid.times[:-1])])
        return X


def _drift_constant(p, D):
    return DriftSpec("constant", p["value"], None, p["cap"], "constant")


def _drift_sine_mode(p, D):
    A, m = p["amplitude"], p["mode"]
    return DriftSpec("deterministic", 0.0, lambda t, x: A * np.sin(m * np.pi * x / D),
                     p["cap"], "sine_mode")


def _drift_feedback_tanh(p, D):
    A, k = p["amplitude"], p["gain"]
    # bounded by |A|, reads only the current slice
    return DriftSpec("feedback", 0.0, lambda t, x, u: -A * np.tanh(k * u), p["cap"],
                     "feedback_tanh")


DRIFT_PRESETS = {
    "constant": (_drift_constant, {"value": 0.0, "cap": 1e6}),
    "sine_mode": (_drift_sine_mode, {"amplitude": 1.0, "mode": 1.0, "cap": 1e6}),
    "feedback_tanh": (_drift_feedback_tanh, {"amplitude": 1.0, "gain": 1.0, "cap": 1e6}),
}


def drift_preset(spec, D: float) -> DriftSpec:
    """Build a drift from a number, a preset name or a ``{"name": ...}`` mapping."""
    factory, params = lookup_preset(DRIFT_PRESETS, spec, "drift")
    return factory(params, D)


def drift_norm_sq(X: np.ndarray, grid: Grid) -> np.ndarray:
    """||X||^2_{T,2} = sum over steps and cells of X^2 dt dx (last two axes)."""
    return np.sum(np.asarray(X) ** 2, axis=(-2, -1)) * grid.dt * grid.dx


def entropy(X: np.ndarray, grid: Grid, *, n_boot: int = 1000, seed: int = 0) -> Estimate:
    """Relative entropy E~||X||^2 / 2.

    ``X`` is (nt, nx) for a deterministic drift, giving an exact value, or
    (R, nt, nx) drift values along tilted-dynamics replicas.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        return Estimate.exact(0.5 * float(drift_norm_sq(X, grid)))
    half = 0.5 * drift_norm_sq(X, grid)
    if np.all(half == half[0]):
        return Estimate.exact(float(half[0]))
    return bootstrap(lambda h: h.mean(axis=1), half, n_boot=n_boot, seed=seed)


def rn_exponent_batch(X: np.ndarray, increments: np.ndarray, grid: Grid) -> np.ndarray:
    """Discrete density process M(t_i) for a batch of untilted sheets, shape (R, nt+1).

    M(t_i) = exp(sum_{i'<i} sum_j X dW - 1/2 sum_{i'<i} sum_j X^2 dt dx).
    """
    inc = np.asarray(increments, dtype=float)
    if inc.ndim == 2:
        inc = inc[None]
    X = np.broadcast_to(np.asarray(X, dtype=float), inc.shape)
    stoch = np.cumsum(np.sum(X * inc, axis=2), axis=1)
    quad = np.cumsum(np.sum(X**2, axis=2), axis=1) * grid.dt * grid.dx
    log_m = np.zeros((inc.shape[0], grid.nt + 1))
    log_m[:, 1:] = stoch - 0.5 * quad
    if np.max(log_m) > _LOG_MAX:
        raise NumericError(f"density exponent overflows: max log M = {np.max(log_m):.6g}")
    return np.exp(log_m)


def rn_exponent(drift, noise: NoiseSheet) -> np.ndarray:
    """M(t_i), i = 0..nt, for one untilted sheet; ``drift`` is a DriftSpec or (nt, nx) array."""
    X = drift.on_grid(noise.grid) if isinstance(drift, DriftSpec) else drift
    return rn_exponent_batch(X, noise.increments, noise.grid)[0]


# -- coupled-pair Monte Carlo --------------------------------------------------

@dataclass
class CouplingSample:
    """Replica-level statistics of the coupled pair (u drifted, v driftless)."""

    grid: Grid
    seed: int
    x_norm2: np.ndarray
    sup_diff: np.ndarray
    l2_diff2: np.ndarray
    nu: np.ndarray
    diff2_mean: np.ndarray
    diff2_var: np.ndarray
    v_probe: np.ndarray | None = None
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    X: np.ndarray | None = None

    @property
    def n_replicas(self) -> int:
        return self.x_norm2.size


def run_coupling(model: ModelSpec, table: KernelTable, drift: DriftSpec, n_replicas: int,
                 seed: int, *, chunk: int = DEFAULT_CHUNK, keep_paths: bool = False,
                 threads: int | None = None) -> CouplingSample:
    """Simulate ``n_replicas`` coupled pairs on independent tilted sheets."""
    if n_replicas < 1:
        raise ConfigurationError("n_replicas must be >= 1")
    grid = table.grid

    def work(reps):
        inc = sample_noise_batch(grid, seed, reps)
        res = integrate(model, table, inc, drift, with_partner=True, replicas=list(reps))
        d = res["u"] - res["v"]
        d2 = d**2
        out = {
            "x_norm2": drift_norm_sq(res["X"], grid),
            "sup_diff": np.max(np.abs(d), axis=(1, 2)),
            "l2_diff2": batch_l2_norm_sq(d, grid),
            "nu": np.maximum.accumulate(np.max(d2, axis=2), axis=1),
            "d2_sum": d2.sum(axis=0),
            "d2_sumsq": (d2**2).sum(axis=0),
            "v_probe": point_values(res["v"][:, -1], grid, grid.D / 2),
        }
        if keep_paths:
            out.update(u=res["u"], v=res["v"], X=res["X"])
        return out

    parts = map_chunks(work, n_replicas, chunk, threads)
    cat = lambda k: np.concatenate([p[k] for p in parts])  # noqa: E731
    s1 = sum(p["d2_sum"] for p in parts)
    s2 = sum(p["d2_sumsq"] for p in parts)
    R = n_replicas
    mean = s1 / R
    var = np.maximum(s2 / R - mean**2, 0.0) * (R / max(R - 1, 1))
    sample = CouplingSample(grid, seed, cat("x_norm2"), cat("sup_diff"), cat("l2_diff2"),
                            cat("nu"), mean, var, cat("v_probe"))
    if keep_paths:
        sample.u, sample.v, sample.X = cat("u"), cat("v"), cat("X")
    return sample


# -- Gronwall chains -------------------------------------------------------------

def gronwall_diagnostics(sample: CouplingSample, table: KernelTable, data: LipschitzData,
                         g_total: float | None = None, *, n_se: float = 2.0) -> dict:
    """Per-slice slack in the two Gronwall chains.

    ``l2`` chain: m(t) <= 3 L_s^2 (H*m)(t) + 3 g_total L_g^2 D int_0^t m
    + 3 K^2 g_total E~||X||^2, with m(t) the running max over s <= t of
    max_x E~|u - v|^2(s, x).

    ``sup`` chain: E~ nu(t) <= 2 L_g^2 T int_0^t E~ nu + 2 g_total E~||X||^2,
    with nu(t) the pathwise running max of max_x |u - v|^2.  Only meaningful
    for constant sigma = 1.

    Slack is RHS - LHS; a slice is flagged when slack < -n_se standard errors.
    """
    grid = table.grid
    dt, R = grid.dt, sample.n_replicas
    G = table.g_total if g_total is None else g_total
    x2 = float(np.mean(sample.x_norm2))

    cell_mean = sample.diff2_mean
    flat = np.argmax(cell_mean, axis=1)
    slice_max = cell_mean[np.arange(grid.nt + 1), flat]
    slice_se = np.sqrt(sample.diff2_var[np.arange(grid.nt + 1), flat] / R)
    m = np.maximum.accumulate(slice_max)
    m_se = slice_se[np.maximum.accumulate(np.where(slice_max >= m, np.arange(grid.nt + 1), 0))]

    H = table.H
    conv = np.zeros(grid.nt + 1)
    for i in range(1, grid.nt + 1):
        lags = np.arange(1, i + 1)
        conv[i] = np.sum(H[lags] * m[i - lags]) * dt
    cum_m = np.concatenate([[0.0], np.cumsum(m[:-1]) * dt])
    rhs_l2 = (3 * data.L_sigma**2 * conv + 3 * G * data.L_g**2 * grid.D * cum_m
              + 3 * data.K_sigma**2 * G * x2)
    slack_l2 = rhs_l2 - m

    nu_mean = sample.nu.mean(axis=0)
    nu_se = sample.nu.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.zeros_like(nu_mean)
    cum_nu = np.concatenate([[0.0], np.cumsum(nu_mean[:-1]) * dt])
    rhs_sup = 2 * data.L_g**2 * grid.T * cum_nu + 2 * G * x2
    slack_sup = rhs_sup - nu_mean

    return {
        "times": grid.times,
        "l2": {"m": m, "se": m_se, "rhs": rhs_l2, "slack": slack_l2,
               "ok": bool(np.all(slack_l2 >= -n_se * m_se))},
        "sup": {"nu": nu_mean, "se": nu_se, "rhs": rhs_sup, "slack": slack_sup,
                "ok": bool(np.all(slack_sup >= -n_se * nu_se))},
        "x_norm2_mean": x2,
    }


# -- experiments -------------------------------------------------------------------

@dataclass
class TciReport:
    mode: str
    entropy: Estimate
    lhs: Estimate
    rhs: Estimate
    ratio: Estimate
    constant_name: str
    constant_value: float
    constants: dict
    n_replicas: int
    seed: int
    gronwall: dict = field(default_factory=dict)
    wasserstein_form_rhs: float = 0.0

    @property
    def verdict(self) -> str:
        if self.ratio.hi < 1.0:
            return "PASS"
        if self.ratio.lo > 1.0:
            return "FAILED"
        return "INCONCLUSIVE"

    def to_dict(self) -> dict:
        def clean(obj):
            if isinstance(obj, Estimate):
                return obj.to_dict()
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in obj.items()}
            if isinstance(obj, np.ndarray):
                return obj.tolist()
            if isinstance(obj, (np.floating, np.integer, np.bool_)):
                return obj.item()
            return obj

        d = {k: clean(v) for k, v in asdict(self).items() if k not in ("entropy", "lhs", "rhs",
                                                                          "ratio")}
        for k in ("entropy", "lhs", "rhs", "ratio"):
            d[k] = getattr(self, k).to_dict()
        d["verdict"] = self.verdict
        return d


def _report(mode, sample: CouplingSample, dist2: np.ndarray, C: float, cname: str,
            constants: dict, table, data, n_boot: int, level: float) -> TciReport:
    grid = table.grid
    x2 = sample.x_norm2
    seed = sample.seed
    if np.all(x2 == x2[0]):
        ent = Estimate.exact(0.5 * float(x2[0]))
    else:
        ent = bootstrap(lambda h: 0.5 * h.mean(axis=1), x2, n_boot=n_boot, level=level, seed=seed)
    lhs = bootstrap(lambda d: np.sqrt(d.mean(axis=1)), dist2, n_boot=n_boot, level=level, seed=seed)
    rhs = bootstrap(lambda h: np.sqrt(C * h.mean(axis=1)), x2, n_boot=n_boot, level=level,
                    seed=seed)

    def ratio_stat(d, h):
        num = np.sqrt(d.mean(axis=1))
        den = np.sqrt(C * h.mean(axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        return r

    if np.all(x2 == 0):
        if np.any(dist2 != 0):
            raise NumericError("zero drift produced a nonzero coupling distance")
        ratio = Estimate.exact(0.0)
    else:
        ratio = bootstrap(ratio_stat, dist2, x2, n_boot=n_boot, level=level, seed=seed)
    gron = gronwall_diagnostics(sample, table, data)
    return TciReport(mode, ent, lhs, rhs, ratio, cname, C, constants, sample.n_replicas, seed,
                     gron, math.sqrt(2 * C * ent.value))


def tci_experiment_sup(model: ModelSpec, table: KernelTable, drift: DriftSpec, c_inf: float,
                       n_replicas: int, seed: int, *, n_boot: int = 1000, level: float = 0.95,
                       constants: dict | None = None, sample: CouplingSample | None = None,
                       threads: int | None = None) -> TciReport:
    """Sup-norm experiment: sqrt(E~ max|u-v|^2) against sqrt(C_inf E~||X||^2).

    Requires sigma identically 1.
    """
    if model.sigma.constant != 1.0:
        raise ConfigurationError("the sup-norm experiment requires sigma == 1")
    sample = sample or run_coupling(model, table, drift, n_replicas, seed, threads=threads)
    return _report("sup", sample, sample.sup_diff**2, c_inf, "c_infinity",
                   constants or {"c_infinity": c_inf}, table, model.lipschitz, n_boot, level)


def tci_experiment_l2(model: ModelSpec, table: KernelTable, drift: DriftSpec, c_two: float,
                      n_replicas: int, seed: int, *, n_boot: int = 1000, level: float = 0.95,
                      constants: dict | None = None, sample: CouplingSample | None = None,
                      threads: int | None = None) -> TciReport:
    """L2 experiment: sqrt(E~||u-v||^2_{T,2}) against sqrt(C_2 E~||X||^2)."""
    bound = model.sigma.bound
    if bound is None or bound > model.lipschitz.K_sigma * (1 + 1e-12):
        raise ConfigurationError("sigma must be bounded by the declared K_sigma")
    sample = sample or run_coupling(model, table, drift, n_replicas, seed, threads=threads)
    return _report("l2", sample, sample.l2_diff2, c_two, "c_two_alpha_star",
                   constants or {"c_two_alpha_star": c_two}, table, model.lipschitz, n_boot, level)
