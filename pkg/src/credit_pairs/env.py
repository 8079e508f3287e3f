"""Hedged two-asset trading environment.

Accounting is in return space. At day ``t`` the agent picks a position
``a_t`` in {-1, 0, +1} (short X/long Y, flat, long X/short Y). Stepping to
``t + 1`` charges ``c * |a_t - a_{t-1}|`` for the trade and credits the
position with the spread return ``a_t * (r_x - r_y)`` of the new day. The
final day only liquidates, so an episode of ``D`` days has ``D - 1`` steps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import Bankrupt, EpisodeDone, EpisodeNotFinished, RangeOutOfBounds
from .marketdata import DateRange, Features, PairSeries, raw_log_features

N_ACCOUNT = 3  # cash, asset value, net value (all relative to N_0)
N_PRICE = 6


class Action(IntEnum):
    SHORT = -1
    CLEAR = 0
    LONG = 1

    @property
    def index(self) -> int:
        """Position in Q-value vectors ordered (short, clear, long)."""
        return int(self) + 1

    @classmethod
    def from_index(cls, i: int) -> "Action":
        return cls(int(i) - 1)


@dataclass(frozen=True)
class EnvConfig:
    cost: float = 0.001
    window_days: int = 60
    initial_net: float = 1.0

    def __post_init__(self):
        if self.cost < 0:
            raise ValueError("transaction cost must be nonnegative")
        if self.window_days < 2:
            raise ValueError("window_days must be at least 2")
        if self.initial_net <= 0:
            raise ValueError("initial_net must be positive")


@dataclass(frozen=True)
class Observation:
    date: np.datetime64
    prev_action: Action
    cash_ratio: float
    asset_ratio: float
    net_ratio: float
    prices: np.ndarray

    @property
    def account(self) -> np.ndarray:
        return np.array([self.cash_ratio, self.asset_ratio, self.net_ratio])


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    step_profit: float
    done: bool


def step_profit(a_prev, a_now, r_x: float, r_y: float, c: float) -> float:
    """Single-period hedged profit ``a_prev * (r_x - r_y) - c * |a_now - a_prev|``."""
    return int(a_prev) * (r_x - r_y) - c * abs(int(a_now) - int(a_prev))


class PairTradingEnv:
    """Stateful episode runner over a fixed :class:`PairSeries`.

    ``features`` supplies the normalised price block of each observation;
    without it raw log features are used.
    """

    def __init__(self, pair: PairSeries, cfg: EnvConfig | None = None,
                 features: Features | np.ndarray | None = None):
        self.pair = pair
        self.cfg = cfg or EnvConfig()
        if features is None:
            prices = raw_log_features(pair)
        else:
            prices = features.values if isinstance(features, Features) else features
        prices = np.asarray(prices, dtype=float)
        if prices.shape != (len(pair), N_PRICE):
            raise ValueError(f"features shape {prices.shape} != ({len(pair)}, {N_PRICE})")
        self._prices = prices
        self._close_x = pair.x.close
        self._close_y = pair.y.close
        self._start = self._end = self._t = None

    # -- episode control ---------------------------------------------------
    def reset(self, episode_range: DateRange | tuple[int, int]) -> Observation:
        """Start an episode over a date range, or over an inclusive
        ``(first_index, last_index)`` pair of positions in the data."""
        if isinstance(episode_range, DateRange):
            idx = episode_range.indices(self.pair.dates)
            if len(idx) == 0:
                raise RangeOutOfBounds(f"no data in {episode_range}")
            first, last = int(idx[0]), int(idx[-1])
            # calendar-month granularity, as in the rolling protocol: a range
            # ending on a weekend after the last trading day is still covered
            months = self.pair.dates[[0, -1]].astype("datetime64[M]")
            if (np.datetime64(episode_range.start, "M") < months[0]
                    or np.datetime64(episode_range.end, "M") > months[1]):
                raise RangeOutOfBounds(f"{episode_range} extends beyond the data")
        else:
            first, last = (int(i) for i in episode_range)
            if first < 0 or last >= len(self.pair):
                raise RangeOutOfBounds(f"indices {first}..{last} outside data")
        if last - first < 1:
            raise RangeOutOfBounds("an episode needs at least 2 days")
        self._start, self._end, self._t = first, last, first
        n = last - first + 1
        self._actions = np.zeros(n, dtype=int)
        self._account = np.zeros((n, N_ACCOUNT))
        self._account[0] = (1.0, 0.0, 1.0)
        self._profits = np.zeros(n - 1)
        self._rx = np.zeros(n)
        self._ry = np.zeros(n)
        self._net = self.cfg.initial_net
        self._prev = Action.CLEAR
        return self.observation()

    @property
    def done(self) -> bool:
        return self._t is not None and self._t == self._end

    @property
    def day(self) -> int:
        """Index of the current day in the pair data."""
        return self._t

    @property
    def start(self) -> int:
        return self._start

    @property
    def n_days(self) -> int:
        return self._end - self._start + 1

    def step(self, action) -> StepResult:
        if self._t is None:
            raise EpisodeDone("call reset() first")
        if self.done:
            raise EpisodeDone("episode finished")
        a = Action(int(action))
        t = self._t
        r_x = self._close_x[t + 1] / self._close_x[t] - 1.0
        r_y = self._close_y[t + 1] / self._close_y[t] - 1.0
        profit = int(a) * (r_x - r_y) - self.cfg.cost * abs(a - self._prev)
        net = self._net * (1.0 + profit)
        if not net > 0:
            raise Bankrupt(f"net value {net:.6g} on {self.pair.dates[t + 1]}")
        k = t - self._start
        self._actions[k] = a
        self._profits[k] = profit
        self._rx[k + 1], self._ry[k + 1] = r_x, r_y
        self._net = net
        self._prev = a
        self._t = t + 1
        ratio = net / self.cfg.initial_net
        self._account[k + 1] = (ratio * (1 - abs(a)), ratio * abs(a), ratio)
        return StepResult(self.observation(), profit, self.done)

    # -- views --------------------------------------------------------------
    def observation(self) -> Observation:
        k = self._t - self._start
        cash, asset, net = self._account[k]
        return Observation(self.pair.dates[self._t], self._prev, cash, asset, net,
                           self._prices[self._t].copy())

    def history(self, window: int | None = None):
        """The last ``window`` observations as arrays
        ``(prev_action_index, account, prices)``.

        Days before the episode carry the initial account state; days before
        the first data point repeat the earliest row.
        """
        w = window or self.cfg.window_days
        return self.rows(self._t - w + 1, self._t)

    def rows(self, first: int, last: int):
        """Observation arrays for data days ``first..last`` (inclusive),
        which must not extend past the current day."""
        if last > self._t:
            raise RangeOutOfBounds("observation rows may not run past the current day")
        days = np.arange(first, last + 1)
        src = np.clip(days, 0, None)
        prices = self._prices[src]
        k = days - self._start
        in_ep = k >= 0
        act_idx = np.ones(len(days), dtype=int)  # CLEAR
        account = np.tile([1.0, 0.0, 1.0], (len(days), 1))
        kk = k[in_ep]
        account[in_ep] = self._account[kk]
        prev = np.zeros(len(kk), dtype=int)
        prev[kk > 0] = self._actions[kk[kk > 0] - 1]
        act_idx[in_ep] = prev + 1
        return act_idx, account, prices

    @property
    def actions(self) -> np.ndarray:
        """Positions chosen so far; the final day reads as flat."""
        return self._actions.copy()

    def episode_returns(self) -> list[float]:
        if not self.done:
            raise EpisodeNotFinished("episode still running")
        return self._profits.tolist()

    def equity_curve(self) -> np.ndarray:
        k = self._t - self._start
        return self.cfg.initial_net * np.concatenate(
            [[1.0], np.cumprod(1.0 + self._profits[:k])])

    def trace(self) -> list[dict]:
        """Per-day rows ``date, action, r_x, r_y, step_profit, net_value``."""
        k_now = self._t - self._start
        equity = self.equity_curve()
        out = []
        for k in range(k_now + 1):
            out.append({
                "date": str(self.pair.dates[self._start + k]),
                "action": int(self._actions[k]),
                "r_x": float(self._rx[k]),
                "r_y": float(self._ry[k]),
                "step_profit": float(self._profits[k - 1]) if k else 0.0,
                "net_value": float(equity[k]),
            })
        return out


TRACE_COLUMNS = ("date", "action", "r_x", "r_y", "step_profit", "net_value")


def write_trace_csv(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in rows:
            w.writerow([row["date"], row["action"]] + [repr(row[c]) for c in TRACE_COLUMNS[2:]])


def run_actions(env: PairTradingEnv, episode_range, actions) -> list[float]:
    """Replay a fixed per-day action sequence; the last action is ignored
    because the final day only liquidates."""
    env.reset(episode_range)
    actions = list(actions)
    if len(actions) != env.n_days:
        raise ValueError(f"{len(actions)} actions for a {env.n_days}-day episode")
    for a in actions[:-1]:
        env.step(a)
    return env.episode_returns()
