"""SMAPE, run summaries, Kruskal-Wallis and Dunn's post-hoc test."""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DimensionError, InputError, NumericError

VARIANTS = ("original", "scratch", "transferred")


def smape(y_true, y_pred):
    """Mean of |p - t| / (|p| + |t|); a term is 0 when both are 0.  Range [0, 1]."""
    t = np.asarray(y_true, dtype=float).ravel()
    p = np.asarray(y_pred, dtype=float).ravel()
    if t.size != p.size:
        raise DimensionError(f"length mismatch: {t.size} vs {p.size}")
    if t.size == 0:
        raise InputError("smape of empty vectors")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p))):
        raise NumericError("smape inputs must be finite")
    denom = np.abs(p) + np.abs(t)
    num = np.abs(p - t)
    terms = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return float(np.mean(terms))


@dataclass(frozen=True)
class MetricReport:
    smape_mean: float
    smape_std: float
    n_runs: int
    variant: str = "transferred"


def summarize(values, variant="transferred"):
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise InputError("cannot summarize an empty vector")
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return MetricReport(float(np.mean(v)), std, int(v.size), variant)


def smape_diff_percent(scratch, transferred):
    """Positive when the transferred model has the lower mean SMAPE."""
    return 100.0 * (scratch.smape_mean - transferred.smape_mean)


# ---------------------------------------------------------------------------
# chi-square and normal tails

def _gammainc_lower_series(a, x):
    term = 1.0 / a
    total = term
    for n in range(1, 1000):
        term *= x / (a + n)
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gammaincc_contfrac(a, x):
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammaincc(a, x):
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise InputError(f"shape must be positive, got {a}")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gammainc_lower_series(a, x))
    return _gammaincc_contfrac(a, x)


def chi2_sf(x, df):
    return gammaincc(df / 2.0, x / 2.0)


def norm_sf(z):
    return 0.5 * math.erfc(z / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# rank tests

def _pooled_ranks(groups):
    arrays = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(arrays) < 2:
        raise InputError("need at least two groups")
    if any(a.size == 0 for a in arrays):
        raise InputError("every group must be non-empty")
    pooled = np.concatenate(arrays)
    if not np.all(np.isfinite(pooled)):
        raise NumericError("group values must be finite")
    if pooled.size < 3:
        raise InputError("need at least three observations in total")
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(pooled.size)
    sorted_vals = pooled[order]
    ties = []
    i = 0
    while i < pooled.size:
        j = i
        while j + 1 < pooled.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        if j > i:
            ties.append(j - i + 1)
        i = j + 1
    sizes = np.array([a.size for a in arrays])
    splits = np.cumsum(sizes)[:-1]
    return np.split(ranks, splits), sizes, ties


def kruskal_wallis(groups):
    """Tie-corrected H statistic and its chi-square (k-1 df) p-value."""
    rank_groups, sizes, ties = _pooled_ranks(groups)
    N = sizes.sum()
    tie_term = sum(t ** 3 - t for t in ties)
    correction = 1.0 - tie_term / (N ** 3 - N)
    if correction <= 0:
        return 0.0, 1.0
    # single division at the end: exact for small tie-free integer rank sums
    s = sum(r.sum() ** 2 / r.size for r in rank_groups)
    H = (12.0 * s - 3.0 * N * (N + 1) ** 2) / (N * (N + 1))
    H = H / correction
    H = max(H, 0.0)
    return float(H), float(chi2_sf(H, len(sizes) - 1))


@dataclass(frozen=True, eq=False)
class DunnResult:
    """Pairwise matrices; ``better[i, j]`` is the index of the group with the
    lower mean rank when the pair is significant, else -1."""

    z: np.ndarray
    p: np.ndarray
    p_adjusted: np.ndarray
    significant: np.ndarray
    better: np.ndarray
    mean_ranks: np.ndarray


def dunn_posthoc(groups, alpha=0.05, adjust="bonferroni"):
    rank_groups, sizes, ties = _pooled_ranks(groups)
    k = len(sizes)
    N = sizes.sum()
    mean_ranks = np.array([r.mean() for r in rank_groups])
    tie_term = sum(t ** 3 - t for t in ties)
    var = N * (N + 1) / 12.0 - tie_term / (12.0 * (N - 1))
    n_pairs = k * (k - 1) // 2
    z = np.zeros((k, k))
    p = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            se = math.sqrt(max(var, 0.0) * (1.0 / sizes[i] + 1.0 / sizes[j]))
            zij = 0.0 if se == 0 else (mean_ranks[i] - mean_ranks[j]) / se
            z[i, j], z[j, i] = zij, -zij
            p[i, j] = p[j, i] = min(1.0, 2.0 * norm_sf(abs(zij)))
    if adjust == "bonferroni":
        p_adj = np.minimum(1.0, p * n_pairs)
    elif adjust in (None, "none"):
        p_adj = p.copy()
    else:
        raise InputError(f"unknown p-value adjustment {adjust!r}")
    np.fill_diagonal(p_adj, 1.0)
    significant = p_adj <= alpha
    np.fill_diagonal(significant, False)
    better = np.full((k, k), -1, dtype=int)
    for i in range(k):
        for j in range(k):
            if significant[i, j] and mean_ranks[i] != mean_ranks[j]:
                better[i, j] = i if mean_ranks[i] < mean_ranks[j] else j
    return DunnResult(z, p, p_adj, significant, better, mean_ranks)


@dataclass(frozen=True, eq=False)
class SignificanceReport:
    kw_statistic: float
    kw_p: float
    pairwise: Optional[DunnResult]
    labels: tuple = VARIANTS
    inconclusive: bool = False

    def better(self, a, b):
        """Label of the significantly better of ``a`` and ``b``, or None."""
        if self.pairwise is None:
            return None
        i, j = self.labels.index(a), self.labels.index(b)
        k = self.pairwise.better[i, j]
        return None if k < 0 else self.labels[k]


def significance(groups, labels=VARIANTS, alpha=0.05, adjust="bonferroni"):
    """Kruskal-Wallis omnibus; Dunn's pairwise test only if it rejects."""
    H, p = kruskal_wallis(groups)
    pairwise = dunn_posthoc(groups, alpha, adjust)
    if p > alpha:
        k = len(groups)
        pairwise = DunnResult(pairwise.z, pairwise.p, pairwise.p_adjusted,
                              np.zeros((k, k), dtype=bool),
                              np.full((k, k), -1, dtype=int), pairwise.mean_ranks)
    return SignificanceReport(H, p, pairwise, tuple(labels))
