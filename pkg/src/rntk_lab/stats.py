"""Small statistics helpers used by tests and the experiment harness."""

from __future__ import annotations

import numpy as np


def ks_statistic(sample: np.ndarray, cdf) -> float:
    """Kolmogorov-Smirnov statistic of a sample against a continuous CDF."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty sample")
    F = np.asarray(cdf(x), dtype=np.float64)
    grid = np.arange(1, n + 1) / n
    return float(max(np.max(grid - F), np.max(F - (grid - 1.0 / n))))


def _ranks(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based), ties shared."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.shape[0])
    sx = x[order]
    i = 0
    while i < len(sx):
        j = i
        while j + 1 < len(sx) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation (Pearson correlation of average ranks)."""
    rx, ry = _ranks(x), _ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    if denom == 0:
        raise ValueError("constant input has no rank correlation")
    return float(np.sum(rx * ry) / denom)


def median(x) -> float:
    return float(np.median(np.asarray(x, dtype=np.float64)))
