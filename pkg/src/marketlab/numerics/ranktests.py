"""Rank and co-occurrence tests used by the analysis pipeline.

``mann_whitney_p`` is two-sided: exact (full enumeration of the null U
distribution) when the smaller sample has at most 8 observations and the
pooled data carry no ties, a tie-corrected normal approximation otherwise.
``hypergeom_tail`` is the one-sided co-occurrence tail probability computed in
log space, the building block of the position-clustering step.
"""

from __future__ import annotations

import math
from functools import lru_cache
from statistics import NormalDist
from typing import Sequence

import numpy as np
from scipy import stats as _sstats

__all__ = ["mann_whitney_p", "hypergeom_tail", "welch_t_p"]

_EXACT_MIN_SIZE = 8
_NORM = NormalDist()


def _rank_with_ties(pooled: np.ndarray) -> tuple[np.ndarray, float]:
    """Fractional ranks plus the tie-correction term sum(t^3 - t)."""
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(len(pooled), dtype=float)
    tie_term = 0.0
    i = 0
    sorted_vals = pooled[order]
    while i < len(pooled):
        j = i
        while j + 1 < len(pooled) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        t = j - i + 1
        if t > 1:
            tie_term += t**3 - t
        i = j + 1
    return ranks, tie_term


@lru_cache(maxsize=256)
def _exact_u_counts(n1: int, n2: int) -> tuple[int, ...]:
    """Counts of each U value over all C(n1+n2, n1) rank assignments.

    Classic recurrence c(m, n, u) = c(m-1, n, u-n) + c(m, n-1, u), built
    bottom-up; equivalent to enumerating every placement of the first
    sample's ranks.
    """
    table: dict[tuple[int, int], tuple[int, ...]] = {}
    for m in range(n1 + 1):
        for n in range(n2 + 1):
            if m == 0 or n == 0:
                table[m, n] = (1,)
                continue
            a = table[m - 1, n]
            b = table[m, n - 1]
            row = [0] * (m * n + 1)
            for u in range(m * n + 1):
                v = 0
                if 0 <= u - n <= (m - 1) * n:
                    v += a[u - n]
                if u <= m * (n - 1):
                    v += b[u]
                row[u] = v
            table[m, n] = tuple(row)
    return table[n1, n2]


def mann_whitney_p(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Two-sided Mann-Whitney p-value for a difference in distributions."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n1, n2 = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks, tie_term = _rank_with_ties(pooled)
    u1 = float(np.sum(ranks[:n1])) - n1 * (n1 + 1) / 2.0
    u2 = n1 * n2 - u1

    no_ties = tie_term == 0.0
    if no_ties and min(n1, n2) <= _EXACT_MIN_SIZE:
        counts = _exact_u_counts(min(n1, n2), max(n1, n2))
        total = math.comb(n1 + n2, n1)
        u_big = math.ceil(max(u1, u2) - 1e-9)
        tail = sum(counts[u] for u in range(u_big, len(counts)))
        return min(1.0, 2.0 * tail / total)

    # normal approximation with tie correction
    n = n1 + n2
    mean_u = n1 * n2 / 2.0
    var_u = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var_u <= 0:
        return 1.0
    z = (max(u1, u2) - mean_u - 0.5) / math.sqrt(var_u)  # continuity correction
    z = max(z, 0.0)
    return min(1.0, 2.0 * (1.0 - _NORM.cdf(z)))


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def hypergeom_tail(overlap: int, k1: int, k2: int, total: int) -> float:
    """P(co-occurrence >= overlap) for k1 and k2 marked rounds among total.

    Computed by summing hypergeometric point masses in log space, so the
    result stays accurate down to ~1e-300.
    """
    if not (0 <= k1 <= total and 0 <= k2 <= total):
        raise ValueError(f"k1={k1}, k2={k2} must lie within total={total}")
    if not 0 <= overlap <= min(k1, k2):
        raise ValueError(f"overlap={overlap} must lie in [0, min(k1, k2)]")
    if overlap == 0:
        return 1.0
    lo = max(0, k1 + k2 - total)
    hi = min(k1, k2)
    denom = _log_comb(total, k2)
    logs = [
        _log_comb(k1, x) + _log_comb(total - k1, k2 - x) - denom
        for x in range(max(overlap, lo), hi + 1)
    ]
    m = max(logs)
    return float(min(1.0, math.exp(m) * sum(math.exp(v - m) for v in logs)))


def welch_t_p(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Two-sided Welch two-sample t-test p-value."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("both samples need at least 2 observations")
    res = _sstats.ttest_ind(a, b, equal_var=False)
    return float(res.pvalue)
