"""Engle-Granger cointegration testing and pair ranking.

The ADF regression and the MacKinnon (1994) response-surface p-values are
implemented here directly; the surface coefficients below are the published
constant-term tables for one (plain ADF) and two (cointegrating residual)
integrated variables.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    DegenerateRegressor,
    LengthMismatch,
    SeriesTooShort,
    SingularRegression,
)
from .marketdata import AssetSeries, DateRange, align_pair

log = logging.getLogger(__name__)

P_MIN, P_MAX = 0.001, 0.999

# MacKinnon (1994), regression with constant; index 0 -> N=1, index 1 -> N=2.
_TAU_STAR = (-1.61, -2.62)
_TAU_MIN = (-18.83, -18.86)
_TAU_MAX = (2.74, 0.92)
_SMALL_P = (
    (2.1659, 1.4412, 3.8269e-2),
    (2.92, 1.5012, 3.9796e-2),
)
_LARGE_P = (
    (1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2),
    (2.1945, 6.4695e-1, -2.9198e-1, -4.2377e-2),
)


@dataclass(frozen=True)
class HedgeFit:
    alpha: float
    beta: float
    residuals: np.ndarray


class AdfResult(NamedTuple):
    statistic: float
    p_value: float
    lags: int


@dataclass(frozen=True)
class CointResult:
    statistic: float
    p_value: float
    lags: int
    alpha: float = 0.0
    beta: float = 0.0


@dataclass(frozen=True)
class RankedPair:
    symbol_x: str
    symbol_y: str
    result: CointResult


def ols_hedge(y, x) -> HedgeFit:
    """Least-squares fit ``y = alpha + beta * x``."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape or y.ndim != 1:
        raise LengthMismatch(f"lengths {y.shape} and {x.shape}")
    if len(x) < 3:
        raise SeriesTooShort("need at least 3 observations")
    xc = x - x.mean()
    sxx = xc @ xc
    if sxx <= 1e-14 * max(1.0, float(x @ x)):
        raise DegenerateRegressor("regressor is constant")
    beta = float(xc @ (y - y.mean()) / sxx)
    alpha = float(y.mean() - beta * x.mean())
    return HedgeFit(alpha, beta, y - alpha - beta * x)


def mackinnon_p(stat: float, n_integrated: int = 1) -> float:
    """Approximate p-value of a DF t-ratio (constant-term surface),
    clamped to ``[P_MIN, P_MAX]``."""
    k = n_integrated - 1
    if math.isnan(stat):
        raise ValueError("statistic is NaN")
    if stat > _TAU_MAX[k]:
        return P_MAX
    if stat < _TAU_MIN[k]:
        return P_MIN
    p = _surface(stat, _SMALL_P[k] if stat <= _TAU_STAR[k] else _LARGE_P[k])
    if stat > _TAU_STAR[k]:
        # the two published pieces do not meet exactly at tau*; keep monotone
        p = max(p, _surface(_TAU_STAR[k], _SMALL_P[k]))
    return min(max(p, P_MIN), P_MAX)


def _surface(stat, coef):
    z = sum(c * stat ** i for i, c in enumerate(coef))
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def schwert_maxlag(n: int) -> int:
    return int(math.floor(12.0 * (n / 100.0) ** 0.25))


def _adf_design(s: np.ndarray, lags: int, start: int, constant: bool):
    """Rows for t = start..T-2 of ds_t on s_t, ds_{t-1..t-lags}, [1]."""
    ds = np.diff(s)
    rows = np.arange(start, len(ds))
    cols = [s[rows]]
    cols += [ds[rows - j] for j in range(1, lags + 1)]
    if constant:
        cols.append(np.ones(len(rows)))
    return np.column_stack(cols), ds[rows]


def _ols_t(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, k = X.shape
    if n <= k:
        raise SingularRegression(f"{n} rows for {k} regressors")
    scale = np.abs(X).max(axis=0)
    if np.any(scale == 0):
        raise SingularRegression("all-zero regressor")
    Xs = X / scale
    if np.linalg.matrix_rank(Xs) < k:
        raise SingularRegression("collinear regressors")
    coef, _, _, _ = np.linalg.lstsq(Xs, y, rcond=None)
    resid = y - Xs @ coef
    sigma2 = resid @ resid / (n - k)
    if not sigma2 > 0:
        raise SingularRegression("perfect fit")
    cov = sigma2 * np.linalg.inv(Xs.T @ Xs)
    return coef, coef / np.sqrt(np.diag(cov))


def _adf_stat(s, max_lags, constant) -> tuple[float, int]:
    s = np.asarray(s, dtype=float)
    n = len(s)
    if n < 20:
        raise SeriesTooShort(f"ADF needs at least 20 observations, got {n}")
    k_extra = 2 if constant else 1
    if max_lags is None or max_lags == "auto":
        maxlag = schwert_maxlag(n)
        # keep at least 10 residual degrees of freedom
        while maxlag > 0 and (n - 1 - maxlag) - (maxlag + k_extra) < 10:
            maxlag -= 1
        lags = maxlag
        while lags > 0:
            X, y = _adf_design(s, lags, maxlag, constant)
            _, t = _ols_t(X, y)
            if abs(t[lags]) > 1.645:
                break
            lags -= 1
    else:
        lags = int(max_lags)
        if lags < 0:
            raise ValueError("max_lags must be nonnegative")
    X, y = _adf_design(s, lags, lags, constant)
    _, t = _ols_t(X, y)
    return float(t[0]), lags


def adf_test(series, max_lags="auto") -> AdfResult:
    """Augmented Dickey-Fuller test with a constant (no trend).

    ``max_lags="auto"`` starts from the Schwert bound and drops the longest
    lag while its t-ratio is below 1.645; an integer fixes the lag count.
    """
    stat, lags = _adf_stat(series, max_lags, constant=True)
    return AdfResult(stat, mackinnon_p(stat, 1), lags)


def engle_granger(x, y, max_lags="auto") -> CointResult:
    """Two-step Engle-Granger test of ``y`` on ``x`` (log prices)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise LengthMismatch(f"lengths {x.shape} and {y.shape}")
    if len(x) < 50:
        raise SeriesTooShort(f"need at least 50 observations, got {len(x)}")
    if np.ptp(y) == 0:
        raise DegenerateRegressor("dependent series is constant")
    fit = ols_hedge(y, x)
    e = fit.residuals
    if np.std(e) <= 1e-10 * np.std(y):
        # exact linear relation: the residual is identically zero
        return CointResult(-math.inf, P_MIN, 0, fit.alpha, fit.beta)
    stat, lags = _adf_stat(e, max_lags, constant=False)
    return CointResult(stat, mackinnon_p(stat, 2), lags, fit.alpha, fit.beta)


def rank_pairs(universe: list[AssetSeries], fit_range: DateRange | None = None,
               skipped: list | None = None) -> list[RankedPair]:
    """Test every pair in ``universe`` and sort by ascending p-value.

    Within a pair the lexicographically smaller symbol is ``x``; ties in
    p-value fall back to symbol order. Pairs that cannot be tested are
    logged and appended to ``skipped`` as ``(symbol_x, symbol_y, reason)``.
    """
    if len(universe) < 2:
        raise ValueError("rank_pairs needs at least 2 assets")
    assets = sorted(universe, key=lambda a: a.symbol)
    ranked = []
    for a, b in itertools.combinations(assets, 2):
        try:
            pair = align_pair(a, b)
            idx = (fit_range.indices(pair.dates) if fit_range is not None
                   else np.arange(len(pair)))
            res = engle_granger(np.log(pair.x.close[idx]), np.log(pair.y.close[idx]))
        except Exception as exc:  # recorded and skipped by contract
            log.warning("skipping %s/%s: %s", a.symbol, b.symbol, exc)
            if skipped is not None:
                skipped.append((a.symbol, b.symbol, str(exc)))
            continue
        ranked.append(RankedPair(a.symbol, b.symbol, res))
    ranked.sort(key=lambda r: (r.result.p_value, r.symbol_x, r.symbol_y))
    return ranked
