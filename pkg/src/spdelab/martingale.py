"""Martingale representation on the discrete white-noise filtration.

The spatial basis is the normalised cell indicators e_k = 1_{cell k}/sqrt(dx),
so W_k(t_i) = sum_{i'<i} dW[i', k]/sqrt(dx) are independent Brownian motions
sampled at the time grid.  A martingale M is projected onto the increments
dW_k step by step with least squares on polynomial features of the past.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .errors import ConfigurationError, RegressionError
from .grid import Grid
from .stats import Estimate, bootstrap


def basis_motions(increments: np.ndarray, grid: Grid) -> np.ndarray:
    """W_k(t_i) for every cell k, shape (..., nt+1, nx); W_k(0) = 0."""
    inc = np.asarray(increments, dtype=float) / np.sqrt(grid.dx)
    out = np.zeros(inc.shape[:-2] + (inc.shape[-2] + 1, inc.shape[-1]))
    np.cumsum(inc, axis=-2, out=out[..., 1:, :])
    return out


def basis_gram(grid: Grid) -> np.ndarray:
    """sum_j e_k(x_j) e_l(x_j) dx for the cell-indicator basis (the identity)."""
    E = np.eye(grid.nx) / np.sqrt(grid.dx)
    return E @ E.T * grid.dx


def polynomial_features(W: np.ndarray, degree: int) -> np.ndarray:
    """All monomials of the columns of W (shape (R, m)) up to ``degree``, constant first."""
    R, m = W.shape
    cols = [np.ones(R)]
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(range(m), d):
            cols.append(np.prod(W[:, combo], axis=1))
    return np.stack(cols, axis=1)


@dataclass
class Projection:
    """Fitted integrands X_k(t_i), shape (R, nt, m), plus regression weights per step."""

    X: np.ndarray
    weights: list
    degree: int
    basis: tuple

    def coefficient_paths(self) -> np.ndarray:
        return self.X


def project_martingale(M: np.ndarray, W: np.ndarray, *, degree: int = 2,
                       basis=None, rcond: float = 1e-10) -> Projection:
    """Least-squares integrands for a martingale sampled on the time grid.

    Args:
        M: (R, nt+1) martingale values per replica.
        W: (R, nt+1, nx) basis motions.
        degree: polynomial degree of the features of W(t_i) used as regressors.
        basis: indices k of the motions to project on (default: all); the
            features are built from the same motions.

    At step i the increment M(t_{i+1}) - M(t_i) is regressed on
    dW_k(t_i) * phi(W(t_i)); the fitted integrand is X_k(t_i) = sum_phi w * phi.
    Features depend on rows < i+1 of W only, so X is adapted.

    Raises:
        RegressionError: the design matrix is rank deficient at some step.
    """
    M = np.asarray(M, dtype=float)
    W = np.asarray(W, dtype=float)
    R, n1 = M.shape
    if W.shape[:2] != (R, n1):
        raise ConfigurationError(f"M has shape {M.shape} but W has {W.shape}")
    basis = tuple(range(W.shape[2])) if basis is None else tuple(basis)
    Wb = W[:, :, basis]
    nt, m = n1 - 1, len(basis)
    X = np.empty((R, nt, m))
    weights = []
    for i in range(nt):
        phi = polynomial_features(Wb[:, i], degree)
        # W(0) = 0, so every non-constant monomial vanishes at the first step
        phi = phi[:, np.any(phi != 0.0, axis=0)]
        dW = Wb[:, i + 1] - Wb[:, i]
        design = (dW[:, :, None] * phi[:, None, :]).reshape(R, -1)
        if design.shape[1] > R:
            raise RegressionError(f"step {i}: {design.shape[1]} features exceed {R} replicas")
        w, _, rank, _ = np.linalg.lstsq(design, M[:, i + 1] - M[:, i], rcond=rcond)
        if rank < design.shape[1]:
            raise RegressionError(f"step {i}: design matrix is rank deficient "
                                  f"({rank} < {design.shape[1]})")
        w = w.reshape(m, -1)
        weights.append(w)
        X[:, i] = phi @ w.T
    return Projection(X, weights, degree, basis)


def reconstruct(X: np.ndarray, W: np.ndarray, basis=None, M0: float | np.ndarray = 0.0) -> np.ndarray:
    """Discrete stochastic sums M0 + sum_k sum_{i'<i} X_k(t_i') dW_k(t_i'), shape (R, nt+1)."""
    W = np.asarray(W, dtype=float)
    basis = tuple(range(W.shape[2])) if basis is None else tuple(basis)
    dW = np.diff(W[:, :, basis], axis=1)
    terms = np.sum(np.asarray(X) * dW, axis=2)
    out = np.empty((W.shape[0], W.shape[1]))
    out[:, 0] = 0.0
    np.cumsum(terms, axis=1, out=out[:, 1:])
    M0 = np.asarray(M0, dtype=float)
    return out + (M0[:, None] if M0.ndim else M0)


def isometry_check(M_hat: np.ndarray, X: np.ndarray, grid: Grid, *, n_boot: int = 1000,
                   seed: int = 0) -> dict:
    """Compare Var[M_hat(T)] with sum_k sum_i E[X_k(t_i)^2] dt, both with bootstrap intervals.

    Returns the two estimates and their difference interval; the identity
    holds when the difference interval contains 0.
    """
    end = M_hat[:, -1]
    energy = np.sum(np.asarray(X) ** 2, axis=(1, 2)) * grid.dt
    var = bootstrap(lambda a: a.var(axis=1, ddof=1), end, n_boot=n_boot, seed=seed)
    qv = bootstrap(lambda a: a.mean(axis=1), energy, n_boot=n_boot, seed=seed)
    diff = bootstrap(lambda a, b: a.var(axis=1, ddof=1) - b.mean(axis=1), end, energy,
                     n_boot=n_boot, seed=seed)
    return {"variance": var, "energy": qv, "difference": diff,
            "ok": bool(diff.lo <= 0.0 <= diff.hi)}


def martingale_test(M: np.ndarray, W: np.ndarray, *, degree: int = 1, level: float = 0.01) -> dict:
    """Test that increments of M are unpredictable from polynomial features of the past.

    At every step the increment is regressed on the features and a Wald test
    with heteroskedasticity-robust (HC0) covariance checks that all
    coefficients vanish; increments X dW have state-dependent variance, so
    the plain F-test would be invalid.  Returns the Bonferroni-corrected
    smallest p-value and the verdict at ``level``.
    """
    from scipy.stats import chi2

    M = np.asarray(M, dtype=float)
    R, n1 = M.shape
    pvals = []
    for i in range(n1 - 1):
        phi = polynomial_features(W[:, i], degree)
        phi = phi[:, np.any(phi != 0.0, axis=0)]
        y = M[:, i + 1] - M[:, i]
        if not np.any(y):
            continue
        bread = np.linalg.inv(phi.T @ phi)
        beta = bread @ (phi.T @ y)
        e = y - phi @ beta
        meat = (phi * e[:, None] ** 2).T @ phi
        cov = bread @ meat @ bread
        stat = float(beta @ np.linalg.solve(cov, beta))
        pvals.append(float(chi2.sf(stat, phi.shape[1])))
    p_min = min(pvals) * len(pvals) if pvals else 1.0
    p_min = min(p_min, 1.0)
    return {"p_value": p_min, "ok": p_min >= level}


def consistency_check(M: np.ndarray, W: np.ndarray, m: int, n: int, *, degree: int = 2,
                      n_boot: int = 500, seed: int = 0) -> dict:
    """Tower-property check across basis sizes m < n.

    Fits integrands on the first n motions, reconstructs M_n, then projects
    M_n on the first m motions.  Those coefficients should agree with the
    direct m-basis fit of M.  Returns per-coefficient differences of the
    time-averaged integrands with bootstrap standard errors.
    """
    if not 0 < m < n <= W.shape[2]:
        raise ConfigurationError(f"need 0 < m < n <= {W.shape[2]}, got m={m}, n={n}")
    big = project_martingale(M, W, degree=degree, basis=range(n))
    M_n = reconstruct(big.X, W, basis=range(n), M0=M[:, 0])
    via = project_martingale(M_n, W, degree=degree, basis=range(m))
    direct = project_martingale(M, W, degree=degree, basis=range(m))
    delta = via.X - direct.X
    # replica-level summary: time-averaged gap per coefficient
    per_rep = delta.mean(axis=1)
    ests = [bootstrap(lambda a: a.mean(axis=1), per_rep[:, k], n_boot=n_boot, seed=seed + k)
            for k in range(m)]
    scale = np.sqrt(np.mean(direct.X**2)) or 1.0
    rel = float(np.max(np.abs(delta)) / scale)
    ok = all(abs(e.value) <= 3.0 * max(e.se, 1e-12) or abs(e.value) <= 1e-2 * scale for e in ests)
    return {"differences": ests, "max_relative_gap": rel, "ok": bool(ok)}


def mean_square_residual(M: np.ndarray, M_hat: np.ndarray) -> Estimate:
    """Mean over replicas of max_i |M_hat - M|^2 (pathwise sup residual)."""
    r = np.max((np.asarray(M_hat) - np.asarray(M)) ** 2, axis=1)
    return bootstrap(lambda a: a.mean(axis=1), r, n_boot=200)
