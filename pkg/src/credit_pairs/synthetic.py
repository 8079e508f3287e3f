"""Synthetic cointegrated pairs with an Ornstein-Uhlenbeck log-spread."""

from __future__ import annotations

import datetime as dt
import math

import numpy as np

from .marketdata import AssetSeries, PairSeries


def business_days(start, end) -> np.ndarray:
    start = np.datetime64(start, "D")
    end = np.datetime64(end, "D")
    days = np.arange(start, end + 1, dtype="datetime64[D]")
    return days[np.is_busday(days)]


def ou_path(n: int, half_life: float, sigma: float, rng: np.random.Generator,
            x0: float | None = None) -> np.ndarray:
    """Exact discretisation of a zero-mean OU process sampled daily.

    ``sigma`` is the daily innovation scale; the process starts from its
    stationary law unless ``x0`` is given.
    """
    phi = 2.0 ** (-1.0 / half_life)
    stationary = sigma / math.sqrt(1.0 - phi * phi)
    out = np.empty(n)
    out[0] = rng.normal(0.0, stationary) if x0 is None else x0
    eps = rng.normal(0.0, sigma, size=n - 1)
    for t in range(1, n):
        out[t] = phi * out[t - 1] + eps[t - 1]
    return out


def ou_pair(seed: int, start: str | dt.date = "2015-01-02",
            end: str | dt.date = "2018-12-31", half_life: float = 10.0,
            spread_vol: float = 0.01, market_vol: float = 0.005, beta: float = 1.0,
            symbols=("SYNX", "SYNY")) -> PairSeries:
    """Pair whose log prices satisfy ``log x = c + beta * log y + s`` with
    ``s`` an OU process and ``log y`` a driftless random walk."""
    rng = np.random.default_rng(seed)
    dates = business_days(start, end)
    n = len(dates)
    log_y = math.log(50.0) + np.concatenate([[0.0], np.cumsum(rng.normal(0, market_vol, n - 1))])
    spread = ou_path(n, half_life, spread_vol, rng)
    log_x = math.log(40.0) - beta * math.log(50.0) + beta * log_y + spread
    legs = []
    for sym, lc in zip(symbols, (log_x, log_y)):
        close = np.exp(lc)
        gap = rng.normal(0.0, 0.002, n)
        open_ = np.concatenate([[close[0]], close[:-1]]) * np.exp(gap)
        volume = np.round(rng.lognormal(math.log(1e6), 0.3, n))
        legs.append(AssetSeries(sym, dates, open_, close, volume))
    return PairSeries(*legs)


def random_walk_asset(symbol: str, dates, rng: np.random.Generator,
                      vol: float = 0.01, start_price: float = 30.0) -> AssetSeries:
    n = len(dates)
    close = start_price * np.exp(np.concatenate([[0.0], np.cumsum(rng.normal(0, vol, n - 1))]))
    volume = np.round(rng.lognormal(math.log(1e6), 0.3, n))
    return AssetSeries(symbol, dates, close, close, volume)
