"""Episode objectives and per-step training rewards."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyReturns, ReturnBelowNegOne

RISK_AWARE = "risk_aware"
PROFIT_ONLY = "profit_only"


@dataclass(frozen=True)
class RewardConfig:
    mode: str = RISK_AWARE
    alpha: float = 0.5

    def __post_init__(self):
        if self.mode not in (RISK_AWARE, PROFIT_ONLY):
            raise ValueError(f"unknown reward mode {self.mode!r}")
        if not math.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError("alpha must be finite and nonnegative")


def _check_returns(returns) -> np.ndarray:
    r = np.asarray(returns, dtype=float)
    if np.any(r <= -1.0):
        raise ReturnBelowNegOne("a return of -100% or worse wipes out the account")
    return r


def cumulative_profit(returns) -> float:
    """Gross growth of one unit of capital, ``prod(1 + R_t)``."""
    r = _check_returns(returns)
    return float(np.prod(1.0 + r)) if len(r) else 1.0


def quadratic_utility(r: float) -> float:
    """Second-order Taylor expansion of ``log(1 + r)`` around zero."""
    return r - 0.5 * r * r


def risk_aware_objective(returns, alpha: float) -> float:
    """Mean minus ``alpha`` times the population variance."""
    r = np.asarray(returns, dtype=float)
    if len(r) == 0:
        raise EmptyReturns("objective of an empty return list")
    mean = r.mean()
    return float(mean - alpha * np.mean((r - mean) ** 2))


def per_step_reward(returns_so_far, cfg: RewardConfig) -> float:
    """Reward for the latest return in ``returns_so_far``.

    Risk-aware rewards are increments of the running objective, so they
    telescope to the episode objective; profit-only rewards are log growth.
    """
    r = np.asarray(returns_so_far, dtype=float)
    if len(r) == 0:
        raise EmptyReturns("no returns yet")
    if cfg.mode == PROFIT_ONLY:
        return math.log1p(_check_returns(r[-1:])[0])
    prev = risk_aware_objective(r[:-1], cfg.alpha) if len(r) > 1 else 0.0
    return risk_aware_objective(r, cfg.alpha) - prev


def per_step_rewards(returns, cfg: RewardConfig) -> np.ndarray:
    """All per-step rewards of an episode in one pass (same values as
    calling :func:`per_step_reward` on every prefix)."""
    r = np.asarray(returns, dtype=float)
    if len(r) == 0:
        return np.zeros(0)
    if cfg.mode == PROFIT_ONLY:
        return np.log1p(_check_returns(r))
    # Welford running mean / population variance
    n = len(r)
    objective = np.empty(n)
    mean = m2 = 0.0
    for i, x in enumerate(r, start=1):
        delta = x - mean
        mean += delta / i
        m2 += delta * (x - mean)
        objective[i - 1] = mean - cfg.alpha * (m2 / i)
    return np.diff(objective, prepend=0.0)
