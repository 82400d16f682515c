"""Scoring and statistics: set-based micro-F1, Cohen's kappa, annotation
tallies, Student's t-test and the chi-square test of independence.

The p-values come from our own regularized incomplete gamma/beta functions
(series + continued fractions, 1e-12 convergence), so the whole stack is
dependency-free and checkable against tabulated reference values.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

# ---------------------------------------------------------------------------
# special functions

_EPS = 1e-12
_ITMAX = 10_000
_FPMIN = 1e-300


def _gamma_p_series(a: float, x: float) -> float:
    # lower regularized gamma by series: P(a,x) = e^{-x} x^a / Gamma(a) * sum
    ap = a
    term = total = 1.0 / a
    for _ in range(_ITMAX):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_cf(a: float, x: float) -> float:
    # upper regularized gamma by Lentz continued fraction
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _ITMAX + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def regularized_gamma_p(a: float, x: float) -> float:
    """Lower regularized incomplete gamma P(a, x), a > 0, x >= 0."""
    if a <= 0:
        raise ValueError("a must be > 0")
    if x < 0:
        raise ValueError("x must be >= 0")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_cf(a, x)


def regularized_gamma_q(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise ValueError("a must be > 0")
    if x < 0:
        raise ValueError("x must be >= 0")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_cf(a, x)


def _beta_cf(a: float, b: float, x: float) -> float:
    # Lentz continued fraction for the incomplete beta
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _ITMAX + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h


def regularized_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), a, b > 0, 0 <= x <= 1."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


# ---------------------------------------------------------------------------
# classification scoring


@dataclass
class ConfusionTally:
    """Pooled TP/FP/FN counts, globally and per class."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    per_class: dict[Hashable, dict[str, int]] = field(default_factory=dict)

    def _cls(self, label) -> dict[str, int]:
        return self.per_class.setdefault(label, {"tp": 0, "fp": 0, "fn": 0})


def micro_f1(pairs: Iterable[tuple[set, set]]) -> tuple[float, ConfusionTally]:
    """Micro-averaged F1 over (gold set, predicted set) pairs.

    TP = sum |gold & pred|, FP = sum |pred - gold|, FN = sum |gold - pred|;
    F1 = 2TP / (2TP + FP + FN). Empty-vs-empty pairs contribute nothing, and
    an all-empty input scores 1.0 (nothing to get wrong).
    """
    tally = ConfusionTally()
    for gold, pred in pairs:
        gold, pred = set(gold), set(pred)
        for label in gold & pred:
            tally.tp += 1
            tally._cls(label)["tp"] += 1
        for label in pred - gold:
            tally.fp += 1
            tally._cls(label)["fp"] += 1
        for label in gold - pred:
            tally.fn += 1
            tally._cls(label)["fn"] += 1
    denom = 2 * tally.tp + tally.fp + tally.fn
    f1 = 1.0 if denom == 0 else 2 * tally.tp / denom
    return f1, tally


def cohens_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Chance-corrected agreement between two equal-length label lists.

    kappa = (p_o - p_e) / (1 - p_e), p_e from the marginal label products.
    Degenerate case p_e = 1 (both lists constant and equal) returns 1.0.
    """
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("empty label lists")
    n = len(a)
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    ca, cb = Counter(a), Counter(b)
    p_e = sum(ca[k] * cb.get(k, 0) for k in ca) / (n * n)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


@dataclass(frozen=True)
class AnnotationVerdict:
    """One reviewer judgment of an extraction against its note. Hallucination
    means the response contained information not derivable from the note."""

    note_id: str
    prompt_id: int
    started_correct: bool
    stopped_correct: bool
    reason_accurate: bool
    hallucination: bool
    comment: str = ""


@dataclass(frozen=True)
class AnnotationSummary:
    accuracy: float | None
    hallucination_rate: float | None
    n: int


def annotation_summary(verdicts: Sequence[AnnotationVerdict]) -> AnnotationSummary:
    n = len(verdicts)
    if n == 0:
        return AnnotationSummary(None, None, 0)
    return AnnotationSummary(
        accuracy=sum(v.reason_accurate for v in verdicts) / n,
        hallucination_rate=sum(v.hallucination for v in verdicts) / n,
        n=n,
    )


# ---------------------------------------------------------------------------
# hypothesis tests


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float
    degenerate: bool = False


@dataclass(frozen=True)
class GroupSummary:
    mean: float
    sd: float
    n: int


def _summarize(group) -> GroupSummary:
    if isinstance(group, GroupSummary):
        return group
    if isinstance(group, tuple) and len(group) == 3:
        return GroupSummary(float(group[0]), float(group[1]), int(group[2]))
    xs = [float(x) for x in group]
    n = len(xs)
    if n < 2:
        raise ValueError("each group needs n >= 2")
    mean = sum(xs) / n
    var = sum((x - mean) ** 2 for x in xs) / (n - 1)
    return GroupSummary(mean, math.sqrt(var), n)


def t_test(group_a, group_b) -> TTestResult:
    """Two-sample Student's t-test with pooled variance (not Welch).

    Groups are raw samples or (mean, sd, n) summaries; both forms go through
    the same moments, so they agree exactly. Two-sided p from the regularized
    incomplete beta. Zero pooled variance: equal means give (t=0, p=1),
    different means give p=0 flagged degenerate.
    """
    a, b = _summarize(group_a), _summarize(group_b)
    if a.n < 2 or b.n < 2:
        raise ValueError("each group needs n >= 2")
    if a.sd < 0 or b.sd < 0:
        raise ValueError("sd must be >= 0")
    df = a.n + b.n - 2
    pooled_var = ((a.n - 1) * a.sd ** 2 + (b.n - 1) * b.sd ** 2) / df
    if pooled_var == 0.0:
        if a.mean == b.mean:
            return TTestResult(t=0.0, df=df, p=1.0)
        return TTestResult(t=math.inf if a.mean > b.mean else -math.inf,
                           df=df, p=0.0, degenerate=True)
    se = math.sqrt(pooled_var * (1.0 / a.n + 1.0 / b.n))
    t = (a.mean - b.mean) / se
    if t == 0.0:
        return TTestResult(t=0.0, df=df, p=1.0)
    p = regularized_beta(df / 2.0, 0.5, df / (df + t * t))
    return TTestResult(t=t, df=df, p=min(1.0, max(0.0, p)))


@dataclass(frozen=True)
class ChiSquareResult:
    chi2: float
    df: int
    p: float


def chi_square_test(table: Sequence[Sequence[float]]) -> ChiSquareResult:
    """Pearson chi-square test of independence on an r x c count table.

    Expected counts from the marginals, df = (r-1)(c-1), p from the upper
    regularized incomplete gamma. No continuity correction. A zero row or
    column marginal is fatal (expected counts would be zero).
    """
    rows = [list(map(float, r)) for r in table]
    r = len(rows)
    if r < 2 or any(len(row) != len(rows[0]) for row in rows):
        raise ValueError("table must be rectangular with r >= 2 rows")
    c = len(rows[0])
    if c < 2:
        raise ValueError("table must have c >= 2 columns")
    if any(v < 0 for row in rows for v in row):
        raise ValueError("counts must be nonnegative")
    row_sums = [sum(row) for row in rows]
    col_sums = [sum(row[j] for row in rows) for j in range(c)]
    for i, s in enumerate(row_sums):
        if s == 0:
            raise ValueError(f"row {i} sums to zero")
    for j, s in enumerate(col_sums):
        if s == 0:
            raise ValueError(f"column {j} sums to zero")
    total = sum(row_sums)
    chi2 = 0.0
    for i in range(r):
        for j in range(c):
            expected = row_sums[i] * col_sums[j] / total
            chi2 += (rows[i][j] - expected) ** 2 / expected
    df = (r - 1) * (c - 1)
    p = regularized_gamma_q(df / 2.0, chi2 / 2.0)
    return ChiSquareResult(chi2=chi2, df=df, p=min(1.0, max(0.0, p)))
