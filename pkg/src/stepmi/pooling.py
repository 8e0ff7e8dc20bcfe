"""Combine per-imputation estimates and run the small analysis models.

The analysis side only ever needs two estimators (an OLS linear model and a
Pearson correlation), plus the combination rule that turns M per-imputation
estimates into a single estimate with a variance that accounts for the
between-imputation spread.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstantInput
from .validation import check_design_matrix


@dataclass(frozen=True)
class PooledResult:
    """Combined estimate from M per-imputation analyses."""

    estimate: np.ndarray
    se: np.ndarray
    within: np.ndarray
    between: np.ndarray
    total: np.ndarray
    df: np.ndarray
    m: int


def rubin_pool(estimates, variances):
    """Pool per-imputation estimates and their squared standard errors.

    estimates and variances are (M, k) arrays (or (M,) for a single
    parameter).  The total variance is the within-imputation average plus
    the between-imputation variance inflated by (1 + 1/M).
    """
    q = np.asarray(estimates, dtype=float)
    u = np.asarray(variances, dtype=float)
    if q.shape != u.shape:
        raise ValueError(f"estimates {q.shape} and variances {u.shape} differ")
    squeeze = q.ndim == 1
    q = q.reshape(q.shape[0], -1)
    u = u.reshape(u.shape[0], -1)
    m = q.shape[0]
    if m < 2:
        raise ValueError("pooling needs at least 2 imputations")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(u))):
        raise ValueError("estimates and variances must be finite")
    if np.any(u < 0):
        raise ValueError("variances must be non-negative")

    q_bar = q.mean(axis=0)
    w = u.mean(axis=0)
    b = q.var(axis=0, ddof=1)
    t = w + (1 + 1 / m) * b
    se = np.sqrt(t)
    with np.errstate(divide="ignore"):
        df = np.where(
            b > 0,
            (m - 1) * (1 + w / ((1 + 1 / m) * b)) ** 2,
            np.inf,
        )
    out = (q_bar, se, w, b, t, df)
    if squeeze:
        out = tuple(a[0] for a in out)
        out = tuple(np.float64(a) for a in out)
    return PooledResult(
        estimate=out[0], se=out[1], within=out[2], between=out[3],
        total=out[4], df=out[5], m=m,
    )


@dataclass(frozen=True)
class OLSFit:
    coef: np.ndarray
    se: np.ndarray
    sigma2: float
    n: int


def ols_fit(x, y):
    """Least squares fit with classical standard errors.

    sigma2 is RSS / (n - p); the coefficient covariance is
    sigma2 * inv(X'X) and se is the square root of its diagonal.
    """
    x = check_design_matrix(np.asarray(x, dtype=float), min_extra_rows=1)
    y = np.asarray(y, dtype=float)
    if y.shape != (x.shape[0],):
        raise ValueError(f"y has shape {y.shape}, expected ({x.shape[0]},)")
    if not np.all(np.isfinite(y)):
        raise ValueError("y must be finite")
    n, p = x.shape
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    sigma2 = float(resid @ resid) / (n - p)
    cov = sigma2 * np.linalg.inv(x.T @ x)
    return OLSFit(coef=coef, se=np.sqrt(np.diag(cov)), sigma2=sigma2, n=n)


def pearson_correlation(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-D arrays of equal length")
    if x.size < 2:
        raise ValueError("need at least 2 observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ConstantInput("correlation is undefined for a constant input")
    xc = x - x.mean()
    yc = y - y.mean()
    return float(xc @ yc / np.sqrt((xc @ xc) * (yc @ yc)))


def mc_error(values):
    """Monte Carlo standard error of a mean over replicates."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("need a 1-D array with at least 2 replicates")
    return float(v.std(ddof=1) / np.sqrt(v.size))
