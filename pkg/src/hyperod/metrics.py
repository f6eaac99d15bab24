"""Evaluation metrics: AUROC, normalized ROC rank and the paired Wilcoxon test."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm, rankdata


class UndefinedMetricError(ValueError):
    pass


def auroc(scores, labels) -> float:
    """Probability that an outlier outscores an inlier, ties counting half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_rank(performances) -> np.ndarray:
    """Normalized rank in [0, 1]; 0 is the best (highest) performance."""
    perf = np.asarray(performances, dtype=float)
    m = perf.size
    if m < 2:
        raise ValueError("roc_rank needs at least two entries")
    return (rankdata(-perf) - 1.0) / (m - 1.0)


def _signed_rank_null_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """counts[s] = number of sign assignments whose positive doubled-rank sum is s."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b, exact_max_n: int = 20) -> float:
    """Two-sided p-value of the paired Wilcoxon signed-rank test.

    Zero differences are dropped. Up to ``exact_max_n`` pairs the exact null
    distribution of the positive rank sum is used (ties handled through
    average ranks); above it, a normal approximation with tie correction.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.shape} vs {b.shape}")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        return 1.0
    ranks = rankdata(np.abs(d))
    t_plus = ranks[d > 0].sum()
    if n <= exact_max_n:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _signed_rank_null_counts(doubled)
        t2 = int(round(2 * t_plus))
        total = 2 ** n
        lower = sum(counts[: t2 + 1])
        upper = sum(counts[t2:])
        p = 2 * min(lower, upper) / total
        return float(min(1.0, p))
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    if var <= 0:
        return 1.0
    z = (t_plus - mean) / math.sqrt(var)
    return float(min(1.0, 2.0 * norm.sf(abs(z))))
