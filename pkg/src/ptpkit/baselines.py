"""Per-link offset estimators used for comparison and initialization.

The order-statistic (L-) estimator combines sorted forward and reverse
differences with moment-optimal weights; the median and trimmed-mean
(fault-tolerant average) estimators fuse per-link sample-mean offsets.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .delaysim import OrderStatMoments
from .errors import ConfigError


@dataclass(frozen=True)
class LWeights:
    """Order-statistic weights, intercept, and the predicted MSE."""

    c1: np.ndarray
    c2: np.ndarray
    eta_const: float
    predicted_mse: float


def l_weights(osm: OrderStatMoments) -> LWeights:
    """Minimum-MSE order-statistic weights under the constant-bias constraint.

    Solves c = S^-1 A^T (A S^-1 A^T)^-1 gamma with
    S = [[S1, -S12], [-S12^T, S2]], A = [[1^T, 1^T], [1^T, -1^T]] and
    gamma = [1, 0]^T, via linear systems (no explicit inverse). The
    constraint forces sum(c1) = sum(c2) = 1/2, so the estimate shifts
    one-for-one with the true offset. Predicted MSE is
    gamma^T (A S^-1 A^T)^-1 gamma.
    """
    P = osm.P
    S = np.block([[osm.S1, -osm.S12], [-osm.S12.T, osm.S2]])
    A = np.vstack([np.ones(2 * P), np.concatenate([np.ones(P), -np.ones(P)])])
    gamma = np.array([1.0, 0.0])

    def solve_for(S_mat):
        X = np.linalg.solve(S_mat, A.T)            # S X = A^T
        resid = np.abs(S_mat @ X - A.T).max()
        if not np.isfinite(resid) or resid > 1e-6 * max(np.abs(A).max(), 1.0):
            raise np.linalg.LinAlgError("inaccurate solve")
        B = A @ X                                  # A S^-1 A^T  (2x2)
        lam = np.linalg.solve(B, gamma)
        return X @ lam, float(lam[0])

    try:
        c, mse = solve_for(S)
    except np.linalg.LinAlgError:
        warnings.warn(
            "singular order-statistic covariance; regularizing diagonal",
            stacklevel=2,
        )
        ridge = 1e-12 * np.trace(S) / (2 * P)
        if ridge <= 0:
            ridge = 1e-30
        c, mse = solve_for(S + ridge * np.eye(2 * P))
    c1, c2 = c[:P], c[P:]
    eta_const = float(c1 @ osm.mu2 - c2 @ osm.mu1)
    return LWeights(c1, c2, eta_const, mse)


def l_estimate(u_i, v_i, w: LWeights) -> float:
    """Apply L-weights to one link's rounds: c1.u_sorted - c2.v_sorted + eta."""
    u = np.sort(np.asarray(u_i, dtype=float))
    v = np.sort(np.asarray(v_i, dtype=float))
    if u.shape != w.c1.shape or v.shape != w.c2.shape:
        raise ConfigError("round count does not match the weight vectors")
    return float(w.c1 @ u - w.c2 @ v + w.eta_const)


def link_sample_mean(u_i, v_i, mean_fwd: float, mean_rev: float) -> float:
    """Sample-mean offset for one link, corrected for known noise means."""
    u = np.asarray(u_i, dtype=float)
    v = np.asarray(v_i, dtype=float)
    return float((u.mean() - v.mean()) / 2 - (mean_fwd - mean_rev) / 2)


def lower_median_index(values) -> int:
    """Index of the lower-median element (element N//2 of the sorted list,
    counting from 1), so the result always names an actual link."""
    v = np.asarray(values, dtype=float)
    if v.size < 1:
        raise ConfigError("need at least one value")
    order = np.argsort(v, kind="stable")
    return int(order[(v.size - 1) // 2])


def median_estimate(per_link_offsets) -> float:
    """Lower median of the per-link offsets."""
    v = np.asarray(per_link_offsets, dtype=float)
    return float(v[lower_median_index(v)])


def fta_estimate(per_link_offsets, M: int) -> float:
    """Trimmed mean discarding the M lowest and M largest offsets."""
    v = np.sort(np.asarray(per_link_offsets, dtype=float))
    if M < 0:
        raise ConfigError("M must be >= 0")
    if v.size - 2 * M < 1:
        raise ConfigError(
            f"trimming {M} from each end of {v.size} offsets leaves nothing"
        )
    if M == 0:
        return float(v.mean())
    return float(v[M:-M].mean())
