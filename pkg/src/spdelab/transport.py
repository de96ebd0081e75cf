"""Empirical Wasserstein-2 distances and concentration profiles.

Point clouds are equal-weight empirical measures.  The exact distance solves
the n x n assignment problem (``scipy.optimize.linear_sum_assignment``); the
entropic one runs log-domain Sinkhorn iterations with epsilon scaling.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .constants import concentration_bound, mgf_bound
from .errors import ConfigurationError, NumericError
from .grid import Grid
from .stats import Estimate, bootstrap, bootstrap_rng

EXACT_CAP = 512
METRICS = ("sup", "l2", "euclidean")


@dataclass(eq=False)
class SampleCloud:
    """Points stored as an (n, ...) array; ``metric`` picks the distance.

    ``sup`` and ``l2`` expect path arrays (n, nt+1, nx) on ``grid``; the L2
    distance sums time rows 1..nt like :func:`spdelab.solver.l2_norm`.
    """

    points: np.ndarray
    metric: str = "euclidean"
    grid: Grid | None = None

    def __post_init__(self):
        pts = self.points
        if isinstance(pts, (list, tuple)) and pts and hasattr(pts[0], "u"):
            if self.grid is None:
                self.grid = pts[0].grid
            if any(p.grid != self.grid for p in pts):
                raise ConfigurationError("all paths in a cloud must share one grid")
            pts = np.stack([p.u for p in pts])
        self.points = np.asarray(pts, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        if self.metric not in METRICS:
            raise ConfigurationError(f"unknown metric {self.metric!r}; choose from {METRICS}")
        if self.metric == "l2" and self.grid is None:
            raise ConfigurationError("the l2 metric needs the grid")

    def __len__(self):
        return self.points.shape[0]

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Distances between broadcast point arrays (leading axes kept)."""
        d = a - b
        if self.metric == "sup":
            return np.max(np.abs(d), axis=tuple(range(-(self.points.ndim - 1), 0)))
        if self.metric == "l2":
            sq = np.sum(d[..., 1:, :] ** 2, axis=(-2, -1)) * self.grid.dt * self.grid.dx
            return np.sqrt(sq)
        return np.sqrt(np.sum(d.reshape(d.shape[: d.ndim - self.points.ndim + 1] + (-1,)) ** 2,
                              axis=-1))


def _flat(cloud: SampleCloud) -> np.ndarray:
    x = cloud.points
    if cloud.metric == "l2":
        x = x[:, 1:] * math.sqrt(cloud.grid.dt * cloud.grid.dx)
    return x.reshape(len(cloud), -1)


def cost_matrix(A: SampleCloud, B: SampleCloud) -> np.ndarray:
    """Squared distances rho(a_i, b_j)^2, shape (n, m)."""
    if A.metric != B.metric:
        raise ConfigurationError("clouds use different metrics")
    if A.points.shape[1:] != B.points.shape[1:]:
        raise ConfigurationError(f"point shapes differ: {A.points.shape[1:]} vs "
                                 f"{B.points.shape[1:]}")
    if A.metric == "sup":
        return np.stack([A.distance(a[None], B.points) ** 2 for a in A.points])
    a, b = _flat(A), _flat(B)
    C = (a**2).sum(1)[:, None] + (b**2).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(C, 0.0)


@dataclass
class TransportResult:
    w2: float
    method: str
    epsilon: float | None = None
    gap: float | None = None
    plan_cost: float | None = None
    iterations: int | None = None
    residual: float | None = None

    def to_dict(self):
        return asdict(self)


def wasserstein2_exact(A: SampleCloud, B: SampleCloud) -> TransportResult:
    """Optimal assignment between two equal-size clouds."""
    n = len(A)
    if n != len(B):
        raise ConfigurationError(f"cloud sizes differ ({n} vs {len(B)}); "
                                 "use wasserstein2_entropic for unequal sizes")
    if n > EXACT_CAP:
        raise ConfigurationError(f"n = {n} exceeds the exact-assignment cap {EXACT_CAP}; "
                                 "use wasserstein2_entropic")
    C = cost_matrix(A, B)
    rows, cols = linear_sum_assignment(C)
    # the Gram-matrix cost cancels badly for nearby points; re-evaluate the matched pairs
    cost = float(np.mean(A.distance(A.points[rows], B.points[cols]) ** 2))
    return TransportResult(math.sqrt(cost), "exact-assignment", plan_cost=cost)


def _round_to_marginals(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project a nearly feasible plan onto the transport polytope.

    Scales down over-full rows and columns, then adds the rank-one
    correction for the remaining deficit.  The cost moves by at most
    2 * max(C) * (L1 marginal violation of P).
    """
    P = P * np.minimum(a / P.sum(axis=1), 1.0)[:, None]
    P = P * np.minimum(b / P.sum(axis=0), 1.0)[None, :]
    ra = a - P.sum(axis=1)
    rb = b - P.sum(axis=0)
    total = ra.sum()
    if total > 0:
        P = P + np.outer(ra, rb) / total
    return P


def wasserstein2_entropic(A: SampleCloud, B: SampleCloud, epsilon: float, *,
                          tol: float = 1e-9, max_iter: int = 50000,
                          round_tol: float = 1e-5) -> TransportResult:
    """Entropic transport by stabilised Sinkhorn scaling with epsilon annealing.

    ``epsilon`` is absolute (same units as the squared cost).  Scalings are
    absorbed into log-domain potentials whenever they grow large, so small
    epsilon does not underflow.  Returns the transport cost of the final plan.
    ``gap`` is the plan cost minus the dual objective, plus the rounding
    shift when one was applied.  Since the dual objective is a lower bound
    on the entropic problem, ``w2^2 - gap`` never exceeds the exact cost
    by more than epsilon * log(n * m).

    Sinkhorn contracts slowly at small epsilon.  When the L1 marginal
    violation is still above ``tol`` after ``max_iter`` sweeps but below
    ``round_tol``, the plan is rounded onto the exact marginals.

    Raises:
        NumericError: marginal violation above ``round_tol`` after ``max_iter`` sweeps.
    """
    if not epsilon > 0:
        raise ConfigurationError(f"epsilon must be positive, got {epsilon!r}")
    C = cost_matrix(A, B)
    n, m = C.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    f = np.zeros(n)
    g = np.zeros(m)

    eps = max(float(C.max()), epsilon)
    total = 0
    while True:
        final = eps == epsilon
        stage_tol = tol if final else 1e-5
        K = np.exp((f[:, None] + g[None, :] - C) / eps)
        u = np.ones(n)
        v = np.ones(m)
        err = math.inf
        for it in range(max_iter):
            v = b / (K.T @ u)
            u = a / (K @ v)
            total += 1
            if max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) > 30.0:
                f += eps * np.log(u)
                g += eps * np.log(v)
                K = np.exp((f[:, None] + g[None, :] - C) / eps)
                u[:] = 1.0
                v[:] = 1.0
            if it % 10 == 0:
                # the u-update makes row sums exact; columns carry the violation
                err = float(np.abs(v * (K.T @ u) - b).sum())
                if err < stage_tol:
                    break
        f += eps * np.log(u)
        g += eps * np.log(v)
        if final:
            break
        eps = max(eps / 2.0, epsilon)

    P = np.exp((f[:, None] + g[None, :] - C) / eps)
    shift = 0.0
    if err >= tol:
        if not err < round_tol:
            raise NumericError(f"Sinkhorn did not converge in {max_iter} iterations; "
                               f"marginal residual {err:.3g}")
        P = _round_to_marginals(P, a, b)
        shift = 2.0 * float(C.max()) * err
    cost = float(np.sum(P * C))
    dual = float(f @ a + g @ b)
    return TransportResult(math.sqrt(max(cost, 0.0)), "entropic", epsilon=float(epsilon),
                           gap=max(cost - dual, 0.0) + shift, plan_cost=cost,
                           iterations=total, residual=err)


def coupling_upper_bound(pairs, metric: str = "l2", grid: Grid | None = None, *,
                         n_boot: int = 1000, seed: int = 0) -> tuple[Estimate, np.ndarray]:
    """sqrt(mean rho(u, v)^2) over coupled pairs, with a bootstrap interval.

    ``pairs`` is either a sequence of (u, v) FieldPath/array tuples or a tuple
    of two stacked arrays.  Returns the estimate and the per-pair distances.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) >= 2:
        U, V = np.asarray(pairs[0], float), np.asarray(pairs[1], float)
    else:
        get = lambda p: p.u if hasattr(p, "u") else np.asarray(p, float)  # noqa: E731
        if grid is None and hasattr(pairs[0][0], "grid"):
            grid = pairs[0][0].grid
        U = np.stack([get(p[0]) for p in pairs])
        V = np.stack([get(p[1]) for p in pairs])
    cloud = SampleCloud(U, metric, grid)
    d = cloud.distance(U, V)
    est = bootstrap(lambda s: np.sqrt(np.mean(s**2, axis=1)), d, n_boot=n_boot, seed=seed)
    return est, d


def concentration_profile(values, C: float, *, n_grid: int = 41, n_boot: int = 1000,
                          seed: int = 0, n_r: int = 40) -> dict:
    """Empirical MGF and tails of scalar samples against the sub-Gaussian bounds.

    Values are centred by their sample mean.  The MGF grid spans
    [-3/sqrt(C), 3/sqrt(C)]; tails are the fraction of samples above
    median + r, compared with exp(-r^2/(8C)) for r >= r0.
    """
    f = np.asarray(values, dtype=float).ravel()
    if not C > 0:
        raise ConfigurationError("C must be positive")
    a = np.linspace(-3.0 / math.sqrt(C), 3.0 / math.sqrt(C), n_grid)
    fc = f - f.mean()
    mgf = np.exp(np.outer(fc, a)).mean(axis=0)
    idx = bootstrap_rng(seed).integers(0, f.size, size=(n_boot, f.size))
    boot = f[idx]
    boot = boot - boot.mean(axis=1, keepdims=True)
    mgf_se = np.array([np.exp(ak * boot).mean(axis=1).std(ddof=1) for ak in a])
    bound = mgf_bound(C, a)

    _, r0 = concentration_bound(C, 0.0)
    spread = max(float(np.max(f) - np.median(f)), r0)
    r = np.linspace(0.0, 1.5 * spread, n_r)
    med = np.median(f)
    tail = (f[None, :] > med + r[:, None]).mean(axis=1)
    tail_bound = np.exp(-(r**2) / (8.0 * C))
    valid = r >= r0
    # binomial standard error of each exceedance fraction
    tail_se = np.sqrt(np.maximum(tail * (1 - tail), 1.0 / f.size) / f.size)
    return {
        "a": a, "mgf": mgf, "mgf_se": mgf_se, "mgf_bound": bound,
        "mgf_ok": bool(np.all(mgf <= bound + 2.0 * mgf_se)),
        "r": r, "tail": tail, "tail_se": tail_se, "tail_bound": tail_bound, "r0": r0,
        "tail_ok": bool(np.all(tail[valid] <= tail_bound[valid] + 2.0 * tail_se[valid])),
    }
