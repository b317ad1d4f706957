"""Confounder-noise covariance estimation.

The covariance of the exogenous noise is fitted by column-wise updates:
each column of the current covariance estimate W is recovered from a lasso
regression against the sample covariance of the noise residuals, which
keeps the implied precision matrix sparse and W positive definite. Under
interventions, only the block on the purely observed coordinates is
updated.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "sample_covariance",
    "lasso",
    "glasso_sweep",
    "glasso",
    "restrict_to_observed",
    "write_back_observed",
]


def sample_covariance(z_rows: np.ndarray) -> np.ndarray:
    """Uncentered sample covariance (1/n) sum_i z_i z_i^T."""
    z = np.asarray(z_rows, dtype=float)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError("need an (n, k) array with n >= 1")
    return z.T @ z / z.shape[0]


def _soft_threshold(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def lasso(
    w11: np.ndarray,
    s12: np.ndarray,
    rho: float,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Minimize 0.5 b^T W11 b - b^T s12 + rho * ||b||_1 by cyclic
    coordinate descent with soft-thresholding.

    This is the quadratic form of the column regression
    0.5 * ||W11^{1/2} b - W11^{-1/2} s12||^2 + rho * ||b||_1 (same
    minimizer, no explicit matrix square roots). Stops when the largest
    coordinate update falls below ``tol``.
    """
    w11 = np.asarray(w11, dtype=float)
    s12 = np.asarray(s12, dtype=float)
    k = w11.shape[0]
    if k == 0:
        return np.zeros(0)
    try:
        np.linalg.cholesky(w11)
    except np.linalg.LinAlgError:
        raise ValueError("W11 must be positive definite") from None
    if rho < 0:
        raise ValueError("rho must be non-negative")
    beta = np.zeros(k)
    grad_off = np.zeros(k)  # W11 @ beta, maintained incrementally
    for _ in range(max_iter):
        delta = 0.0
        for j in range(k):
            r = s12[j] - (grad_off[j] - w11[j, j] * beta[j])
            new = _soft_threshold(r, rho) / w11[j, j]
            step = new - beta[j]
            if step != 0.0:
                grad_off += w11[:, j] * step
                beta[j] = new
                delta = max(delta, abs(step))
        if delta < tol:
            break
    return beta


def restrict_to_observed(w: np.ndarray, target: frozenset[int] | set[int]) -> np.ndarray:
    """Principal submatrix on the non-intervened coordinates. An all-node
    target yields an empty 0x0 block (the covariance update is skipped)."""
    w = np.asarray(w, dtype=float)
    observed = [i for i in range(w.shape[0]) if i not in target]
    return w[np.ix_(observed, observed)].copy()


def write_back_observed(
    sigma: np.ndarray, block: np.ndarray, target: frozenset[int] | set[int]
) -> np.ndarray:
    """Write an updated observed-block estimate back into the full matrix."""
    out = np.array(sigma, dtype=float)
    observed = [i for i in range(out.shape[0]) if i not in target]
    out[np.ix_(observed, observed)] = block
    return out


def _sweep_once(w: np.ndarray, s: np.ndarray, rho: float,
                lasso_tol: float) -> np.ndarray:
    k = w.shape[0]
    support = np.zeros((k, k), dtype=bool)
    for j in range(k):
        rest = [i for i in range(k) if i != j]
        w11 = w[np.ix_(rest, rest)]
        s12 = s[rest, j]
        beta = lasso(w11, s12, rho, tol=lasso_tol)
        w12 = w11 @ beta
        w[rest, j] = w12
        w[j, rest] = w12
        nz = beta != 0.0
        support[rest, j] = nz
        support[j, rest] = nz
    if k > 0 and not _is_pd(w):
        raise ValueError("sweep left an indefinite matrix")
    return support


def glasso_sweep(
    w: np.ndarray,
    s: np.ndarray,
    rho: float,
    lasso_tol: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray]:
    """One full cycle of column updates on the covariance estimate.

    The diagonal is pinned to s_jj + rho (column updates never touch it),
    then each column in turn is recovered as W11 @ beta from the lasso on
    the remaining block, written back symmetrically. Returns the updated
    matrix and the boolean off-diagonal support of the implied precision
    (nonzero lasso coefficients).

    A warm-started matrix can lose positive definiteness against fresh
    statistics; one diagonal boost of 1e-6 * trace / k is attempted before
    giving up with RuntimeError.
    """
    w = np.array(w, dtype=float)
    s = np.asarray(s, dtype=float)
    k = w.shape[0]
    if k == 0:
        return w, np.zeros((0, 0), dtype=bool)
    w[np.diag_indices(k)] = np.diag(s) + rho
    for boosted in (False, True):
        try:
            support = _sweep_once(w, s, rho, lasso_tol)
            return w, support
        except ValueError:
            if boosted:
                break
            w[np.diag_indices(k)] += 1e-6 * np.trace(w) / k
    raise RuntimeError("covariance sweep lost positive definiteness")


def glasso(
    s: np.ndarray,
    rho: float,
    tol: float = 1e-8,
    max_sweeps: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Run sweeps from W = S + rho*I until the estimate stops moving.

    Returns the covariance estimate and the off-diagonal support of the
    implied precision from the final sweep.
    """
    s = np.asarray(s, dtype=float)
    w = s + rho * np.eye(s.shape[0])
    support = np.zeros_like(w, dtype=bool)
    for _ in range(max_sweeps):
        w_new, support = glasso_sweep(w, s, rho)
        if np.max(np.abs(w_new - w)) < tol:
            return w_new, support
        w = w_new
    return w, support


def penalized_loglik(w: np.ndarray, s: np.ndarray, rho: float) -> float:
    """Objective maximized by the sweeps:
    -Tr(S W^{-1}) - log|W| - rho * ||W^{-1}||_1."""
    theta = np.linalg.inv(w)
    sign, logdet = np.linalg.slogdet(w)
    if sign <= 0:
        return -np.inf
    return float(-np.trace(s @ theta) - logdet - rho * np.abs(theta).sum())


def _is_pd(m: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(m)
        return True
    except np.linalg.LinAlgError:
        return False
