"""Rank metrics and hypothesis tests used by the evaluation reports.

Implemented directly on numpy so the package carries no statistical
dependency: AUC (Mann-Whitney formulation), tie-aware Spearman rank
correlation, paired and Welch t-tests (Student-t CDF via the regularized
incomplete beta), Wilcoxon signed-rank (exact for n <= 25, tie-corrected
normal approximation with continuity correction above) and the
Mann-Whitney U test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TestResult",
    "auc",
    "spearman",
    "paired_t",
    "wilcoxon_signed_rank",
    "welch_t",
    "mann_whitney",
    "rankdata",
    "student_t_sf",
    "normal_sf",
]

WILCOXON_EXACT_MAX_N = 25


@dataclass(frozen=True)
class TestResult:
    method: str
    statistic: float
    p_value: float
    n: int
    n2: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def normal_sf(x: float) -> float:
    """Standard normal survival function."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (Lentz's method)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-12:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    x = df / (df + t * t)
    tail = 0.5 * _betainc(df / 2.0, 0.5, x)
    return tail if t >= 0 else 1.0 - tail


# ---------------------------------------------------------------------------
# ranking helpers
# ---------------------------------------------------------------------------

def rankdata(x: np.ndarray) -> np.ndarray:
    """Average (fractional) ranks, 1-based, ties share the mean rank."""
    x = np.asarray(x, dtype=float)
    n = x.size
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n, dtype=float)
    sx = x[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _tie_term(values: np.ndarray) -> float:
    """sum(t^3 - t) over groups of tied values."""
    _, counts = np.unique(values, return_counts=True)
    counts = counts.astype(float)
    return float(np.sum(counts**3 - counts))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic.

    Tied scores are credited 0.5. Raises if only one class is present.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be binary")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC requires both classes present")
    ranks = rankdata(scores)
    rank_sum_pos = float(np.sum(ranks[labels == 1]))
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def spearman(x, y) -> float:
    """Tie-aware Spearman rank correlation (Pearson on average ranks)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-d arrays of equal length")
    if x.size < 3:
        raise ValueError("need at least 3 points")
    rx = rankdata(x)
    ry = rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        raise ValueError("rank variance is zero; correlation undefined")
    return float(rx @ ry) / denom


# ---------------------------------------------------------------------------
# hypothesis tests
# ---------------------------------------------------------------------------

def paired_t(d) -> TestResult:
    """One-sample t-test of the differences against zero (two-sided)."""
    d = np.asarray(d, dtype=float)
    n = d.size
    if n < 2:
        raise ValueError("need at least 2 differences")
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ValueError("zero-variance differences")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    p = 2.0 * student_t_sf(abs(t), n - 1)
    return TestResult("paired_t", t, min(p, 1.0), n)


def welch_t(a, b) -> TestResult:
    """Welch's unequal-variance t-test (two-sided)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n1, n2 = a.size, b.size
    if n1 < 2 or n2 < 2:
        raise ValueError("need at least 2 observations per sample")
    v1 = float(np.var(a, ddof=1))
    v2 = float(np.var(b, ddof=1))
    se2 = v1 / n1 + v2 / n2
    if se2 == 0.0:
        raise ValueError("zero-variance inputs")
    t = (float(np.mean(a)) - float(np.mean(b))) / math.sqrt(se2)
    df = se2**2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1))
    p = 2.0 * student_t_sf(abs(t), df)
    return TestResult("welch_t", t, min(p, 1.0), n1, n2)


def _wilcoxon_exact_p(ranks2: np.ndarray, w2: float) -> float:
    """Exact two-sided p over the 2^n sign assignments.

    ``ranks2`` holds doubled ranks (integers even with midrank ties) and
    ``w2`` the doubled observed statistic.
    """
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    for r in ranks2.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    counts /= counts.sum()
    w2 = int(round(w2))
    cdf = float(counts[: w2 + 1].sum())
    sf = float(counts[w2:].sum())
    return min(1.0, 2.0 * min(cdf, sf))


def wilcoxon_signed_rank(d) -> TestResult:
    """Two-sided Wilcoxon signed-rank test of differences against zero.

    Zero differences are dropped. Exact enumeration for n <= 25, otherwise
    a tie-corrected normal approximation with continuity correction.
    """
    d = np.asarray(d, dtype=float)
    d = d[d != 0.0]
    n = d.size
    if n < 2:
        raise ValueError("need at least 2 nonzero differences")
    ranks = rankdata(np.abs(d))
    w_pos = float(np.sum(ranks[d > 0]))
    if n <= WILCOXON_EXACT_MAX_N:
        p = _wilcoxon_exact_p(2.0 * ranks, 2.0 * w_pos)
        return TestResult("wilcoxon_signed_rank", w_pos, p, n)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - _tie_term(np.abs(d)) / 48.0
    if var <= 0.0:
        raise ValueError("zero variance in signed ranks")
    diff = w_pos - mean
    z = (diff - 0.5 * np.sign(diff)) / math.sqrt(var)
    p = 2.0 * normal_sf(abs(z))
    return TestResult("wilcoxon_signed_rank", w_pos, min(p, 1.0), n)


def mann_whitney(a, b) -> TestResult:
    """Two-sided Mann-Whitney U test, normal approximation.

    Tie-corrected variance and continuity correction; statistic is U of the
    first sample.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n1, n2 = a.size, b.size
    if n1 < 2 or n2 < 2:
        raise ValueError("need at least 2 observations per sample")
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    r1 = float(np.sum(ranks[:n1]))
    u1 = r1 - n1 * (n1 + 1) / 2.0
    mean = n1 * n2 / 2.0
    n = n1 + n2
    tie = _tie_term(pooled)
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0.0:
        raise ValueError("all pooled values tied; U test degenerate")
    diff = u1 - mean
    z = (diff - 0.5 * np.sign(diff)) / math.sqrt(var)
    p = 2.0 * normal_sf(abs(z))
    return TestResult("mann_whitney", u1, min(p, 1.0), n1, n2)
