"""Wilcoxon signed-rank test for paired per-trial errors.

Zero differences are dropped before ranking. Tied magnitudes get midranks;
the exact null distribution is built on doubled ranks so midranks stay
integers. Above ``EXACT_MAX_N`` non-zero pairs the tie-corrected normal
approximation (no continuity correction) is used instead.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

EXACT_MAX_N = 25
MIN_PAIRS = 6


@dataclass(frozen=True)
class PairedTest:
    statistic: float      # min(W+, W-)
    p_value: float
    n: int                # pairs supplied
    n_nonzero: int        # pairs with a non-zero difference
    w_plus: float
    w_minus: float
    method: str           # "exact" | "normal" | "degenerate"
    median_a: float
    median_b: float

    @property
    def degenerate(self) -> bool:
        return self.method == "degenerate"

    def a_lower(self) -> bool:
        """True when condition ``a`` has the lower median."""
        return self.median_a < self.median_b

    def as_dict(self) -> dict:
        d = asdict(self)
        d["degenerate"] = self.degenerate
        return d


def midranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def subset_sum_counts(weights) -> np.ndarray:
    """counts[s] = number of subsets of the integer ``weights`` summing to s.

    Under the null each difference is positive or negative with probability
    1/2 independently, so W+ (in doubled-rank units) is distributed as the
    sum of a uniformly random subset.
    """
    weights = [int(w) for w in weights]
    counts = np.zeros(sum(weights) + 1, dtype=np.float64)
    counts[0] = 1.0
    top = 0
    for w in weights:
        counts[w:top + w + 1] += counts[:top + 1].copy()
        top += w
    return counts


def exact_p_value(ranks, w_plus: float) -> float:
    """Two-sided exact p for the observed W+ given (possibly tied) ranks."""
    doubled = np.rint(2.0 * np.asarray(ranks)).astype(np.int64)
    counts = subset_sum_counts(doubled)
    total = counts.sum()
    k = int(round(2.0 * w_plus))
    lower = counts[:k + 1].sum() / total
    upper = counts[k:].sum() / total
    return float(min(1.0, 2.0 * min(lower, upper)))


def normal_p_value(ranks, w_plus: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    if var <= 0:
        return 1.0
    z = (w_plus - mean) / math.sqrt(var)
    return float(min(1.0, math.erfc(abs(z) / math.sqrt(2.0))))


def paired_test(errors_a, errors_b, exact_max_n: int = EXACT_MAX_N) -> PairedTest:
    """Two-sided Wilcoxon signed-rank test on ``errors_a - errors_b``."""
    a = np.asarray(errors_a, dtype=float)
    b = np.asarray(errors_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    if len(a) < MIN_PAIRS:
        raise ValueError(f"need at least {MIN_PAIRS} pairs, got {len(a)}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("paired samples must be finite")
    d = a - b
    d = d[d != 0.0]
    med_a, med_b = float(np.median(a)), float(np.median(b))
    if len(d) == 0:
        return PairedTest(0.0, 1.0, len(a), 0, 0.0, 0.0, "degenerate", med_a, med_b)
    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    if len(d) <= exact_max_n:
        p, method = exact_p_value(ranks, w_plus), "exact"
    else:
        p, method = normal_p_value(ranks, w_plus), "normal"
    return PairedTest(min(w_plus, w_minus), p, len(a), len(d), w_plus, w_minus, method,
                      med_a, med_b)
