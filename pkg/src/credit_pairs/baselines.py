"""Rule-based comparison policies: buy-and-hold and the constant-parameters
threshold method."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .agent import AgentConfig, with_method
from .errors import DegenerateSpread
from .marketdata import DateRange, PairSeries
from .pairselect import ols_hedge
from .reward import PROFIT_ONLY


def bah_policy(direction: int, horizon: int) -> list[int]:
    """Hold ``direction`` (+1 long, -1 short) every day, flat on the last."""
    if direction not in (1, -1):
        raise ValueError("direction must be +1 (long) or -1 (short)")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    return [direction] * (horizon - 1) + [0]


@dataclass(frozen=True)
class CpmConfig:
    open_threshold: float = 1.0
    stop_threshold: float = 2.0
    mean: float = 0.0
    std: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not 0 < self.open_threshold < self.stop_threshold:
            raise ValueError("need 0 < open_threshold < stop_threshold")
        if not self.std > 0:
            raise DegenerateSpread(f"spread stdev {self.std} is not positive")


def spread(pair: PairSeries, beta: float) -> np.ndarray:
    return np.log(pair.x.close) - beta * np.log(pair.y.close)


def fit_cpm(pair: PairSeries, train: DateRange, open_threshold: float = 1.0,
            stop_threshold: float = 2.0) -> CpmConfig:
    """Hedge ratio of log X on log Y plus spread mean/stdev over ``train``."""
    idx = train.indices(pair.dates)
    lx, ly = np.log(pair.x.close[idx]), np.log(pair.y.close[idx])
    beta = ols_hedge(lx, ly).beta
    s = lx - beta * ly
    std = float(s.std())
    # an exact hedge leaves only rounding noise in the spread
    if not std > 1e-12 * max(1.0, float(np.abs(s).max())):
        raise DegenerateSpread("spread is constant over the training range")
    return CpmConfig(open_threshold, stop_threshold, float(s.mean()), std, beta)


def cpm_actions(z, open_threshold: float = 1.0, stop_threshold: float = 2.0) -> list[int]:
    """Threshold rules applied to a z-score path, one action per day.

    Flat: open short when ``open < z <= stop``, long when
    ``-stop <= z < -open``. Positioned: clear when z reaches or crosses zero,
    on a stop-loss breach ``|z| > stop`` (then stay flat until z crosses
    zero again), or on the final day.
    """
    z = np.asarray(z, dtype=float)
    n = len(z)
    out = [0] * n
    pos = 0
    entry_sign = 0.0
    blocked_sign = 0.0  # nonzero while waiting for a zero cross after a stop
    for t in range(n):
        zt = z[t]
        last = t == n - 1
        if pos:
            crossed = zt == 0 or np.sign(zt) != entry_sign
            if last or crossed:
                pos = 0
            elif abs(zt) > stop_threshold:
                pos = 0
                blocked_sign = np.sign(zt)
        else:
            if blocked_sign and (zt == 0 or np.sign(zt) != blocked_sign):
                blocked_sign = 0.0
            if not blocked_sign and not last:
                if open_threshold < zt <= stop_threshold:
                    pos, entry_sign = -1, 1.0
                elif -stop_threshold <= zt < -open_threshold:
                    pos, entry_sign = 1, -1.0
        out[t] = pos
    return out


def cpm_zscores(pair: PairSeries, test: DateRange, cfg: CpmConfig) -> np.ndarray:
    idx = test.indices(pair.dates)
    return (spread(pair, cfg.beta)[idx] - cfg.mean) / cfg.std


def cpm_policy(pair: PairSeries, test: DateRange, cfg: CpmConfig) -> list[int]:
    return cpm_actions(cpm_zscores(pair, test, cfg), cfg.open_threshold,
                       cfg.stop_threshold)


def mlp_rl_config(cfg: AgentConfig) -> AgentConfig:
    """Feed-forward encoder trained on log-growth rewards."""
    return with_method(cfg, nn.FEEDFORWARD, PROFIT_ONLY)
