"""Agreement and correlation statistics used to validate generated data.

All operations are pure and deterministic.  The Student-t tail needed for
Pearson p-values is evaluated through the regularized incomplete beta
function (continued fraction), accurate to well below 1e-10, so small
p-values keep real tail accuracy.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Hashable, Optional, Sequence

import numpy as np

from .errors import ConstantInput, Degenerate, LengthMismatch, RowSumMismatch

__all__ = [
    "fleiss_kappa",
    "pearson",
    "majority_vote",
    "intensity_label_to_value",
    "student_t_two_sided_p",
    "TIE",
    "INTENSITY_ORDINALS",
]

TIE = "TIE"

# Ordinal annotation vocabulary for conflict intensity, in display order.
# Values are equally spaced over [0, 1]; the spacing is an artifact choice
# recorded in run manifests.
INTENSITY_ORDINALS: tuple[str, ...] = (
    "Non-conflicting",
    "Weakly conflicting",
    "Conflicting",
    "Strongly conflicting",
)

_INTENSITY_VALUES = {
    "Non-conflicting": 0.0,
    "Weakly conflicting": 1.0 / 3.0,
    "Conflicting": 2.0 / 3.0,
    "Strongly conflicting": 1.0,
    "NON_CONFLICTING": 0.0,
    "WEAKLY_CONFLICTING": 1.0 / 3.0,
    "CONFLICTING": 2.0 / 3.0,
    "STRONGLY_CONFLICTING": 1.0,
}


def fleiss_kappa(counts: Sequence[Sequence[int]], raters: Optional[int] = None) -> float:
    """Fleiss' kappa over an N-items x C-categories count matrix.

    Every row must sum to the common rater count ``raters`` (inferred from
    the first row when omitted).
    """
    matrix = np.asarray(counts, dtype=float)
    if matrix.ndim != 2:
        raise ValueError("counts must be a 2-d matrix")
    n_items, n_categories = matrix.shape
    if n_items < 1 or n_categories < 2:
        raise ValueError("need at least 1 item and 2 categories")
    row_sums = matrix.sum(axis=1)
    r = float(raters) if raters is not None else float(row_sums[0])
    if r < 2:
        raise ValueError("need at least 2 raters")
    bad = np.nonzero(row_sums != r)[0]
    if bad.size:
        raise RowSumMismatch(
            "row sums must equal the rater count", row=int(bad[0]), expected=r,
            got=float(row_sums[bad[0]]),
        )
    p_i = ((matrix * matrix).sum(axis=1) - r) / (r * (r - 1))
    p_bar = float(p_i.mean())
    p_j = matrix.sum(axis=0) / (n_items * r)
    p_e = float((p_j * p_j).sum())
    if p_e >= 1.0:
        raise Degenerate("all ratings fall in a single category; kappa undefined")
    return (p_bar - p_e) / (1.0 - p_e)


def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the incomplete beta function (Lentz's method).
    MAXIT, EPS, FPMIN = 500, 3e-16, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of the Student t distribution."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    return _betainc(df / 2.0, 0.5, df / (df + t * t))


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Sample Pearson correlation and two-sided p-value (t-test, n-2 df)."""
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise LengthMismatch("inputs must be 1-d vectors of equal length",
                             x_len=xs.shape, y_len=ys.shape)
    n = xs.size
    if n < 3:
        raise ValueError("need at least 3 observations")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ConstantInput("correlation undefined for a constant vector")
    rho = float(np.dot(dx, dy) / math.sqrt(sxx * syy))
    rho = max(-1.0, min(1.0, rho))
    if abs(rho) == 1.0:
        return rho, 0.0
    df = n - 2
    t = rho * math.sqrt(df / (1.0 - rho * rho))
    return rho, student_t_two_sided_p(t, df)


def majority_vote(labels: Sequence[Hashable]) -> Hashable:
    """Strict-plurality winner, or TIE when no label strictly dominates."""
    if not labels:
        raise ValueError("labels must be non-empty")
    counts = Counter(labels).most_common()
    if len(counts) > 1 and counts[0][1] == counts[1][1]:
        return TIE
    return counts[0][0]


def intensity_label_to_value(label: str) -> float:
    """Ordinal intensity label -> value in [0, 1] (equal spacing)."""
    try:
        return _INTENSITY_VALUES[str(label)]
    except KeyError:
        raise ValueError(f"unknown intensity label {label!r}")
