"""Estimators and hypothesis tests for the verification harness.

All p-values are asymptotic. Logarithms are natural throughout.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special
from scipy.stats import chi2 as _chi2

from .limits import Disorder, LimitConstants, malthusian

__all__ = [
    "SummaryStats",
    "KsResult",
    "ChiSquareResult",
    "SlopeFit",
    "TooFewSamples",
    "summarize",
    "kolmogorov_sf",
    "ks_one_sample",
    "ks_two_sample",
    "chi_square_homogeneity",
    "standardize_hopcount",
    "unstandardize_hopcount",
    "recenter_weight",
    "slope_fit",
    "correlation",
    "normal_cdf",
    "test_report",
    "write_report",
    "REPORT_KEYS",
]

MIN_KS_SAMPLES = 8
REPORT_KEYS = ("test_name", "statistic", "p_value", "pass", "config")


class TooFewSamples(ValueError):
    """Raised when a test gets fewer observations than it needs."""


@dataclass(frozen=True)
class SummaryStats:
    count: int
    mean: float
    variance: float
    std_error: float


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n1: int
    n2: Optional[int] = None


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    p_value: float
    dof: int


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    slope_se: float


def summarize(x) -> SummaryStats:
    """Count, mean, unbiased variance and standard error of the mean."""
    a = np.asarray(x, dtype=float).ravel()
    if a.size < 2:
        raise TooFewSamples("need at least 2 observations for a variance")
    var = float(np.var(a, ddof=1))
    return SummaryStats(int(a.size), float(a.mean()), var, math.sqrt(var / a.size))


def normal_cdf(x):
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def kolmogorov_sf(x: float) -> float:
    """``P(K > x)`` for the Kolmogorov distribution, ``2 sum (-1)^(k-1) exp(-2 k^2 x^2)``."""
    return float(special.kolmogorov(x))


def _effective(ne: float, d: float) -> float:
    # small-sample correction of Stephens; still asymptotic in ne
    rn = math.sqrt(ne)
    return kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d)


def ks_one_sample(samples, cdf: Callable) -> KsResult:
    """One-sample KS distance to a continuous ``cdf`` (vectorised callable)."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < MIN_KS_SAMPLES:
        raise TooFewSamples(f"KS needs at least {MIN_KS_SAMPLES} samples, got {n}")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - f), np.max(f - (i - 1) / n), 0.0))
    return KsResult(d, _effective(n, d), n)


def ks_two_sample(a, b) -> KsResult:
    """Two-sample KS distance with effective size ``n1 n2 / (n1 + n2)``."""
    x = np.sort(np.asarray(a, dtype=float).ravel())
    y = np.sort(np.asarray(b, dtype=float).ravel())
    n1, n2 = x.size, y.size
    if min(n1, n2) < MIN_KS_SAMPLES:
        raise TooFewSamples(f"KS needs at least {MIN_KS_SAMPLES} samples per side")
    grid = np.concatenate([x, y])
    cdf1 = np.searchsorted(x, grid, side="right") / n1
    cdf2 = np.searchsorted(y, grid, side="right") / n2
    d = float(np.max(np.abs(cdf1 - cdf2)))
    return KsResult(d, _effective(n1 * n2 / (n1 + n2), d), n1, n2)


def chi_square_homogeneity(a, b, min_expected: float = 5.0) -> ChiSquareResult:
    """Chi-square test that two samples of integers share one distribution.

    Adjacent values are pooled, in increasing order, until every cell has an
    expected count of at least ``min_expected`` in both rows. A single
    surviving cell means there is nothing to test (p = 1).
    """
    a = np.asarray(a, dtype=np.int64).ravel()
    b = np.asarray(b, dtype=np.int64).ravel()
    if a.size == 0 or b.size == 0:
        raise TooFewSamples("both samples must be non-empty")
    values = np.union1d(a, b)
    ca = np.array([np.count_nonzero(a == v) for v in values], dtype=float)
    cb = np.array([np.count_nonzero(b == v) for v in values], dtype=float)
    fa = a.size / (a.size + b.size)
    cells, acc_a, acc_b = [], 0.0, 0.0
    for xa, xb in zip(ca, cb):
        acc_a += xa
        acc_b += xb
        tot = acc_a + acc_b
        if min(tot * fa, tot * (1 - fa)) >= min_expected:
            cells.append((acc_a, acc_b))
            acc_a = acc_b = 0.0
    if acc_a + acc_b > 0:
        if cells:
            la, lb = cells.pop()
            cells.append((la + acc_a, lb + acc_b))
        else:
            cells.append((acc_a, acc_b))
    if len(cells) < 2:
        return ChiSquareResult(0.0, 1.0, 0)
    obs = np.array(cells)
    tot = obs.sum(axis=1)
    exp = np.stack([tot * fa, tot * (1 - fa)], axis=1)
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = len(cells) - 1
    return ChiSquareResult(stat, float(_chi2.sf(stat, dof)), dof)


def _scalar_or_array(v):
    return float(v) if np.ndim(v) == 0 else v


def standardize_hopcount(h, n: int, d: Disorder):
    """``(h - s log n) / sqrt(s^2 log n)``."""
    if n < 3:
        raise ValueError("standardization needs n >= 3")
    ln = math.log(n)
    return _scalar_or_array((np.asarray(h, dtype=float) - d.s * ln) / (d.s * math.sqrt(ln)))


def unstandardize_hopcount(z, n: int, d: Disorder):
    ln = math.log(n)
    return _scalar_or_array(np.asarray(z, dtype=float) * d.s * math.sqrt(ln) + d.s * ln)


def recenter_weight(c_original, n: int, d: Disorder, lc: Optional[LimitConstants] = None):
    """``n^s c - log(n) / lam`` for a weight in original unit-mean units."""
    lc = lc or malthusian(d)
    return _scalar_or_array(n**d.s * np.asarray(c_original, dtype=float) - math.log(n) / lc.lam)


def slope_fit(x: Sequence[float], y: Sequence[float],
              y_se: Optional[Sequence[float]] = None) -> SlopeFit:
    """Weighted least squares line with weights ``1 / se^2``.

    With known standard errors the slope error comes from the design alone;
    without them the residual variance is used.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size:
        raise ValueError("x and y differ in length")
    if x.size < 3:
        raise TooFewSamples("slope_fit needs at least 3 points")
    if np.unique(x).size < 2:
        raise np.linalg.LinAlgError("singular design: x has no spread")
    if y_se is None:
        w = np.ones_like(x)
    else:
        se = np.asarray(y_se, dtype=float)
        if se.shape != x.shape or np.any(~(se > 0)):
            raise ValueError("standard errors must be positive, one per point")
        w = 1.0 / se**2
    sw = w.sum()
    xm, ym = np.dot(w, x) / sw, np.dot(w, y) / sw
    sxx = float(np.dot(w, (x - xm) ** 2))
    if not sxx > 0:
        raise np.linalg.LinAlgError("singular design")
    slope = float(np.dot(w, (x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    if y_se is None:
        resid = y - intercept - slope * x
        sigma2 = float(np.dot(resid, resid) / (x.size - 2))
        slope_se = math.sqrt(sigma2 / sxx)
    else:
        slope_se = math.sqrt(1.0 / sxx)
    return SlopeFit(slope, intercept, slope_se)


def correlation(a, b) -> float:
    """Pearson correlation of two equal-length samples."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError("samples differ in length")
    if a.size < MIN_KS_SAMPLES:
        raise TooFewSamples(f"correlation needs at least {MIN_KS_SAMPLES} pairs")
    da, db = a - a.mean(), b - b.mean()
    va, vb = float(np.dot(da, da)), float(np.dot(db, db))
    if va == 0 or vb == 0:
        raise ZeroDivisionError("correlation undefined for a constant sample")
    return float(np.clip(np.dot(da, db) / math.sqrt(va * vb), -1.0, 1.0))


def test_report(test_name: str, statistic: float, p_value: Optional[float], passed: bool,
                config: Optional[dict] = None) -> dict:
    """One report record ``{test_name, statistic, p_value, pass, config}``."""
    return {
        "test_name": str(test_name),
        "statistic": None if statistic is None else float(statistic),
        "p_value": None if p_value is None else float(p_value),
        "pass": bool(passed),
        "config": dict(config or {}),
    }


test_report.__test__ = False  # not a pytest test


def write_report(records: Sequence[dict], path) -> None:
    with open(path, "w") as fh:
        json.dump(list(records), fh, indent=2, sort_keys=True)
        fh.write("\n")
