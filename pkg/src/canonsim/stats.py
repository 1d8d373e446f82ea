"""Rank statistics shared by the synthetic lab and the evaluation harness."""

import math

import numpy as np


class InsufficientDataError(ValueError):
    """Too few observations for the requested statistic."""


def average_ranks(x):
    """1-based ranks with ties assigned their mean rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sx[1:] != sx[:-1]])
    ends = np.r_[starts[1:], len(sx)]
    run_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks, ends - starts


def rank_sum_pvalue(a, b):
    """Two-sided Wilcoxon rank-sum (Mann-Whitney U) p-value.

    Normal approximation with the tie-corrected variance and no continuity
    correction.  Returns 1.0 when every observation is tied.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    n1, n2 = len(a), len(b)
    if n1 < 2 or n2 < 2:
        raise InsufficientDataError(f"rank-sum test needs >= 2 samples per group, got {n1} and {n2}")
    ranks, ties = average_ranks(np.concatenate([a, b]))
    n = n1 + n2
    u1 = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    tie_term = float(np.sum(ties.astype(np.float64) ** 3 - ties))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        return 1.0
    z = (u1 - n1 * n2 / 2.0) / math.sqrt(var)
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
