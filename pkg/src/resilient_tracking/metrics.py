"""Tracking-quality metrics: OSPA distance between point sets and NMSE of
cardinality-estimate time series."""

import numpy as np
from scipy.optimize import linear_sum_assignment


def _as_points(x):
    pts = np.asarray(x, dtype=float)
    if pts.size == 0:
        return pts.reshape(0, 2)
    return pts.reshape(len(pts), -1)


def ospa(x, y, c: float = 5.0, p: float = 1.0) -> float:
    """Optimal subpattern assignment distance between finite point sets.

    With m = |x| <= n = |y|:
        OSPA = ( (1/n) * ( min-cost assignment of min(c, d)^p + c^p (n-m) ) )^(1/p)
    and symmetrically otherwise.  Two empty sets have distance 0.
    """
    if c <= 0:
        raise ValueError("cutoff must be positive")
    if p < 1:
        raise ValueError("order must be at least 1")
    xs, ys = _as_points(x), _as_points(y)
    m, n = xs.shape[0], ys.shape[0]
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return float(c)
    dists = np.linalg.norm(xs[:, None, :] - ys[None, :, :], axis=2)
    costs = np.minimum(dists, c) ** p
    rows, cols = linear_sum_assignment(costs)
    assigned = float(costs[rows, cols].sum())
    total = assigned + (c**p) * abs(n - m)
    return float((total / max(m, n)) ** (1.0 / p))


def nmse(estimates, truth) -> float:
    """Normalized mean squared error: sum (est - true)^2 / sum true^2."""
    est = np.asarray(estimates, dtype=float).reshape(-1)
    tru = np.asarray(truth, dtype=float).reshape(-1)
    if est.shape != tru.shape:
        raise ValueError("estimate and truth series must have equal length")
    denom = float((tru**2).sum())
    if denom == 0.0:
        raise ValueError("truth series is identically zero")
    return float(((est - tru) ** 2).sum() / denom)
