"""Monte Carlo integrator for the mild form of the stochastic heat equation.

One step of the exponential-integrator splitting reads

    u[i+1] = P(dt) @ (u[i] + dt*g(t_i, x, u[i])
                      + sigma(t_i, x, u[i]) * (dW[i]/dx + X[i]*dt))

with P(dt) = exp(dt*A) the exact discrete semigroup.  Unrolled, this is the
discrete mild formulation: the initial datum, the reaction and the noise are
all convolved against G(t - s) = P(t - s)/dx.  ``g`` and ``sigma`` are
evaluated at the left endpoint, so the stochastic sum is of Ito/Walsh type
and its variance is ``sum_lags sum_k G^2 sigma^2 dx dt``.

When a drift ``X`` is given, the increments passed in are interpreted as the
tilted sheet dW~ (a Brownian sheet under the tilted measure) and ``X``
enters through ``sigma * X * dt``.  Under that convention the driftless
partner of a coupled pair uses the same dW~ without the drift term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import LipschitzData
from .errors import BlowUpError, ConfigurationError
from .grid import Grid, NoiseSheet, SeedSpec
from .kernel import Boundary, KernelTable, OperatorSpec
from .presets import Coefficient
from .stats import Estimate, bootstrap

BLOWUP_LIMIT = 1e12


@dataclass(frozen=True)
class ModelSpec:
    g: Coefficient
    sigma: Coefficient
    u0: object
    lipschitz: LipschitzData
    operator: OperatorSpec = field(default_factory=OperatorSpec)

    def initial(self, grid: Grid) -> np.ndarray:
        u0 = self.u0(grid.centers) if callable(self.u0) else self.u0
        u0 = np.broadcast_to(np.asarray(u0, dtype=float), (grid.nx,)).copy()
        if not np.all(np.isfinite(u0)):
            raise ConfigurationError("initial condition must be finite")
        return u0


@dataclass(frozen=True, eq=False)
class FieldPath:
    """Solution values u[i, j] at (t_i, cell midpoint x_j), shape (nt+1, nx)."""

    u: np.ndarray
    grid: Grid
    boundary: Boundary = Boundary.DIRICHLET
    replica: int | None = None
    seed: SeedSpec | None = None

    def __sub__(self, other: "FieldPath") -> "FieldPath":
        if self.grid != other.grid:
            raise ConfigurationError("paths live on different grids")
        return FieldPath(self.u - other.u, self.grid, self.boundary)

    def boundary_values(self) -> np.ndarray:
        """Face values at x = 0 and x = D per time slice, shape (nt+1, 2).

        Reconstructed from the ghost-cell closure: zero for Dirichlet, the
        adjacent cell value for Neumann (zero one-sided derivative), and the
        average of the two end cells for periodic (equal at both ends).
        """
        u = self.u
        if self.boundary is Boundary.DIRICHLET:
            return np.zeros((u.shape[0], 2))
        if self.boundary is Boundary.NEUMANN:
            return np.stack([u[:, 0], u[:, -1]], axis=1)
        wrap = 0.5 * (u[:, 0] + u[:, -1])
        return np.stack([wrap, wrap], axis=1)

    def value_at(self, x: float, i: int = -1) -> float:
        """Linear interpolation between cell midpoints at time index ``i``."""
        return float(point_values(self.u[None, i], self.grid, x)[0])


def point_values(slices: np.ndarray, grid: Grid, x: float) -> np.ndarray:
    """Interpolate rows of cell values (shape (..., nx)) at position x.

    A convex combination of two cells, hence 1-Lipschitz in the sup norm.
    """
    pos = x / grid.dx - 0.5
    j = int(np.clip(np.floor(pos), 0, grid.nx - 2))
    w = float(np.clip(pos - j, 0.0, 1.0))
    return (1.0 - w) * slices[..., j] + w * slices[..., j + 1]


def _check_grid(table: KernelTable, increments: np.ndarray):
    if increments.shape[-2:] != table.grid.shape:
        raise ConfigurationError(
            f"noise shape {increments.shape[-2:]} does not match kernel grid {table.grid.shape}"
        )


def _guard(u: np.ndarray, step: int, label: str, replicas=None):
    bad = ~np.isfinite(u) | (np.abs(u) > BLOWUP_LIMIT)
    if bad.any():
        r, j = map(int, np.argwhere(bad)[0])
        rep = replicas[r] if replicas is not None else r
        raise BlowUpError(f"{label}: |u| exceeded {BLOWUP_LIMIT:g} or became non-finite "
                          f"at step {step}, cell {j}, replica {rep}", step, j, rep)


def _readonly(a: np.ndarray) -> np.ndarray:
    v = a.view()
    v.flags.writeable = False
    return v


def integrate(model: ModelSpec, table: KernelTable, increments: np.ndarray, drift=None, *,
              with_partner: bool = False, replicas=None):
    """Batched time stepping.

    Args:
        increments: (R, nt, nx) cell increments (the tilted sheet when a drift is given).
        drift: object with ``evaluate(i, t, x, history) -> (R, nx)``; ``history``
            is a read-only view of the drifted path up to and including step i.
        with_partner: also integrate the driftless partner on the same increments.

    Returns:
        dict with ``u`` (R, nt+1, nx), ``X`` (R, nt, nx) or None, and ``v`` when
        ``with_partner``.
    """
    increments = np.asarray(increments, dtype=float)
    if increments.ndim == 2:
        increments = increments[None]
    _check_grid(table, increments)
    grid = table.grid
    R, nt, nx = increments.shape
    x, times, dt, dx = grid.centers, grid.times, grid.dt, grid.dx
    PT = np.ascontiguousarray(table.step.T)
    g, sig = model.g, model.sigma

    u = np.empty((R, nt + 1, nx))
    u[:, 0] = model.initial(grid)
    v = None
    if with_partner:
        v = np.empty_like(u)
        v[:, 0] = u[:, 0]
    Xs = np.empty((R, nt, nx)) if drift is not None else None

    for i in range(nt):
        t = times[i]
        kick = increments[:, i] / dx
        ui = u[:, i]
        if drift is not None:
            X = drift.evaluate(i, t, x, _readonly(u[:, : i + 1]))
            X = np.broadcast_to(X, (R, nx))
            Xs[:, i] = X
            force = ui + dt * g.fn(t, x, ui) + sig.fn(t, x, ui) * (kick + X * dt)
        else:
            force = ui + dt * g.fn(t, x, ui) + sig.fn(t, x, ui) * kick
        u[:, i + 1] = force @ PT
        _guard(u[:, i + 1], i + 1, "u", replicas)
        if with_partner:
            vi = v[:, i]
            v[:, i + 1] = (vi + dt * g.fn(t, x, vi) + sig.fn(t, x, vi) * kick) @ PT
            _guard(v[:, i + 1], i + 1, "v", replicas)
    out = {"u": u, "X": Xs}
    if with_partner:
        out["v"] = v
    return out


def solve(model: ModelSpec, table: KernelTable, noise: NoiseSheet, drift=None) -> FieldPath:
    """Integrate one replica; with ``drift``, ``noise`` is the tilted sheet."""
    if noise.grid != table.grid:
        raise ConfigurationError("noise and kernel table were built on different grids")
    res = integrate(model, table, noise.increments, drift)
    rep = noise.seed.replica if noise.seed is not None else None
    return FieldPath(res["u"][0], table.grid, table.boundary, rep, noise.seed)


def solve_pair(model: ModelSpec, table: KernelTable, noise: NoiseSheet, drift):
    """Coupled pair (u, v) driven by the same tilted sheet; u carries the drift."""
    if noise.grid != table.grid:
        raise ConfigurationError("noise and kernel table were built on different grids")
    res = integrate(model, table, noise.increments, drift, with_partner=True)
    rep = noise.seed.replica if noise.seed is not None else None
    mk = lambda a: FieldPath(a[0], table.grid, table.boundary, rep, noise.seed)  # noqa: E731
    return mk(res["u"]), mk(res["v"])


def sup_norm(path) -> float:
    """Max of |u| over all grid nodes; a lower bound for the continuum sup."""
    u = path.u if isinstance(path, FieldPath) else np.asarray(path)
    return float(np.max(np.abs(u)))


def l2_norm(path, grid: Grid | None = None) -> float:
    """sqrt(sum over t_1..t_nt and all cells of u^2 dt dx)."""
    if isinstance(path, FieldPath):
        u, grid = path.u, path.grid
    else:
        u = np.asarray(path)
    return float(np.sqrt(np.sum(u[1:] ** 2) * grid.dt * grid.dx))


def batch_sup_norm(u: np.ndarray) -> np.ndarray:
    return np.max(np.abs(u), axis=(1, 2))


def batch_l2_norm_sq(u: np.ndarray, grid: Grid) -> np.ndarray:
    return np.sum(u[:, 1:] ** 2, axis=(1, 2)) * grid.dt * grid.dx


def moment_check(paths: np.ndarray, p: float, *, n_boot: int = 1000, seed: int = 0) -> dict:
    """Estimate sup over (t, x) of E|u(t, x)|^p with a bootstrap interval.

    Args:
        paths: (R, nt+1, nx) array or a list of :class:`FieldPath`.

    The interval is bootstrapped at the maximising node.
    """
    if p < 1:
        raise ConfigurationError(f"moment order must be >= 1, got {p}")
    if isinstance(paths, (list, tuple)):
        paths = np.stack([q.u for q in paths])
    a = np.abs(np.asarray(paths, dtype=float)) ** p
    finite = bool(np.all(np.isfinite(a)))
    means = a.mean(axis=0)
    i, j = np.unravel_index(np.argmax(means), means.shape)
    est = bootstrap(lambda s: s.mean(axis=1), a[:, i, j], n_boot=n_boot, seed=seed)
    return {"estimate": est, "argmax": (int(i), int(j)), "finite": finite}


def lipschitz_ratio(coef: Coefficient, t: float, x: np.ndarray, u: np.ndarray,
                    w: np.ndarray) -> float:
    """Largest |f(u) - f(w)| / |u - w| over sampled pairs (finite-difference Lipschitz)."""
    du = np.abs(u - w)
    mask = du > 1e-12
    if not mask.any():
        return 0.0
    df = np.abs(coef.fn(t, x, u) - coef.fn(t, x, w))
    return float(np.max(df[mask] / du[mask]))


def walsh_variance(table: KernelTable, i: int | None = None) -> np.ndarray:
    """Discrete isometry sum_{lag=1..i} sum_k G(lag dt)^2 dx dt for sigma = 1.

    Returns the variance profile over cells at time index ``i`` (default nt).
    """
    grid = table.grid
    i = grid.nt if i is None else i
    G = table.G[1 : i + 1]
    return np.sum(G**2, axis=(0, 2)) * grid.dx * grid.dt


def drift_convolution(table: KernelTable, X: np.ndarray, sigma_value: float = 1.0) -> np.ndarray:
    """Deterministic response sum_s sum_y G(t-s, x, y) sigma X(s, y) dy ds, shape (nt+1, nx)."""
    grid = table.grid
    X = np.broadcast_to(np.asarray(X, dtype=float), grid.shape)
    out = np.zeros((grid.nt + 1, grid.nx))
    for i in range(1, grid.nt + 1):
        # lag l = i - i' for source step i'
        out[i] = sum(table.G[i - ip] @ X[ip] for ip in range(i)) * grid.dx * grid.dt * sigma_value
    return out
