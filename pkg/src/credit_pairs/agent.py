"""Double deep Q-learning over the recurrent window encoder."""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import nn
from .env import Action, EnvConfig, PairTradingEnv
from .errors import NonFiniteLoss, RangeOutOfBounds, ShapeMismatch
from .marketdata import Features, PairSeries, RollingSplit, log_normalize
from .reward import RewardConfig, per_step_rewards, risk_aware_objective

log = logging.getLogger(__name__)

# argmax ties resolve toward clear, then long, then short
_TIE_ORDER = (Action.CLEAR.index, Action.LONG.index, Action.SHORT.index)


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    lr: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    target_sync_every: int = 100
    replay_capacity: int = 64
    batch: int = 16
    subseq_len: int = 40
    episodes_per_rolling: int = 300
    episode_days: int = 63
    warmup_episodes: int = 5
    eval_every: int = 10
    train_ratio: float = 1.0  # gradient steps per environment step
    encoder: str = nn.BIGRU
    d_a: int = 4
    d_h: int = 32
    hidden: int = 64
    reward: RewardConfig = field(default_factory=RewardConfig)
    reward_scale: float = 100.0
    clip_norm: float | None = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not self.epsilon_start >= self.epsilon_end >= 0.0 or self.epsilon_start > 1:
            raise ValueError("need 1 >= epsilon_start >= epsilon_end >= 0")
        if self.episode_days < 2 or self.subseq_len < 1 or self.batch < 1:
            raise ValueError("episode_days >= 2, subseq_len >= 1 and batch >= 1 required")
        if self.train_ratio < 0:
            raise ValueError("train_ratio must be non-negative")

    @property
    def net_spec(self) -> nn.NetSpec:
        return nn.NetSpec(encoder=self.encoder, d_a=self.d_a, d_h=self.d_h,
                          hidden=self.hidden)


class Transition(NamedTuple):
    window: nn.Windows  # batch of one, ending at day t
    action: Action
    reward: float
    next_window: nn.Windows  # batch of one, ending at day t + 1
    done: bool


class Batch(NamedTuple):
    """Transitions sharing one stack of windows.

    ``cur[i]`` and ``nxt[i]`` index the windows ending at ``t`` and ``t + 1``
    of transition ``i``; subsequences from one episode reuse windows.
    """

    windows: nn.Windows
    cur: np.ndarray
    nxt: np.ndarray
    actions: np.ndarray  # Q-vector indices 0..2
    rewards: np.ndarray
    dones: np.ndarray

    @classmethod
    def from_transitions(cls, transitions) -> "Batch":
        ts = list(transitions)
        if not ts:
            raise ValueError("empty batch")
        wins = [t.window for t in ts] + [t.next_window for t in ts]
        stacked = _stack_windows(wins)
        n = len(ts)
        return cls(stacked, np.arange(n), np.arange(n, 2 * n),
                   np.array([Action(int(t.action)).index for t in ts]),
                   np.array([t.reward for t in ts], dtype=float),
                   np.array([t.done for t in ts], dtype=bool))

    def __len__(self):
        return len(self.cur)


def _stack_windows(wins) -> nn.Windows:
    lengths = {w.act_idx.shape[1] for w in wins}
    if len(lengths) != 1:
        raise ShapeMismatch("windows in one batch must share a length")
    return nn.Windows(np.concatenate([w.act_idx for w in wins]),
                      np.concatenate([w.account for w in wins]),
                      np.concatenate([w.prices for w in wins]))


def _take(w: nn.Windows, idx) -> nn.Windows:
    return nn.Windows(w.act_idx[idx], w.account[idx], w.prices[idx])


def greedy_index(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax with the clear > long > short tie rule."""
    q = np.atleast_2d(q)
    ordered = q[:, _TIE_ORDER]
    return np.asarray(_TIE_ORDER)[np.argmax(ordered, axis=1)]


def select_action(window: nn.Windows, params: nn.QParams, epsilon: float,
                  rng: np.random.Generator) -> Action:
    """Epsilon-greedy action for a single window."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if rng.random() < epsilon:
        return Action.from_index(rng.integers(3))
    q = nn.q_values(params, window)
    return Action.from_index(greedy_index(q)[0])


def ddqn_target(batch: Batch, online: nn.QParams, target: nn.QParams, gamma: float,
                q_online_next: np.ndarray | None = None) -> np.ndarray:
    """``r + gamma * Q_target(s', argmax_a Q_online(s', a))``; terminal
    transitions keep only ``r``."""
    if online.spec != target.spec:
        raise ShapeMismatch("online and target networks differ in shape")
    nxt = _take(batch.windows, batch.nxt)
    if q_online_next is None:
        q_online_next = nn.q_values(online, nxt)
    a_star = greedy_index(q_online_next)
    q_next = nn.q_values(target, nxt)[np.arange(len(batch)), a_star]
    return batch.rewards + gamma * np.where(batch.dones, 0.0, q_next)


def td_update(batch: Batch, online: nn.QParams, target: nn.QParams, gamma: float,
              optimizer: nn.Adam) -> tuple[float, nn.QParams]:
    """One Adam step on the mean squared TD error; returns the pre-step
    loss and the updated online parameters."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    q_all, tape = nn.forward(online, batch.windows)
    y = ddqn_target(batch, online, target, gamma, q_online_next=q_all[batch.nxt])
    rows = np.arange(len(batch))
    pred = q_all[batch.cur, batch.actions]
    err = pred - y
    loss = float(np.mean(err * err))
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"TD loss is {loss}; max |Q| = {np.abs(q_all).max():.3g}")
    dq = np.zeros_like(q_all)
    np.add.at(dq, (batch.cur, batch.actions), 2.0 * err / len(rows))
    grads = nn.backward(online, tape, dq)
    return loss, optimizer.step(online, grads)


def sync_target(online: nn.QParams, target: nn.QParams | None = None) -> nn.QParams:
    """Hard copy of the online parameters."""
    return online.copy()


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------

class EpisodeRecord(NamedTuple):
    """One finished episode. ``rows`` holds observation rows for days
    ``start - W + 1 .. end`` so the window of episode day ``k`` is
    ``rows[k : k + W]``."""

    act_idx: np.ndarray
    account: np.ndarray
    prices: np.ndarray
    actions: np.ndarray  # Q-vector indices, one per step
    rewards: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.actions)


class EpisodeReplay:
    """Ring buffer of whole episodes; samples contiguous subsequences that
    never cross an episode boundary."""

    def __init__(self, capacity: int, window: int):
        self.episodes: deque[EpisodeRecord] = deque(maxlen=capacity)
        self.window = window

    def __len__(self):
        return len(self.episodes)

    def add(self, ep: EpisodeRecord):
        if len(ep.act_idx) != ep.n_steps + self.window:
            raise ValueError("episode rows do not match window + steps")
        self.episodes.append(ep)

    def sample(self, rng: np.random.Generator, batch: int, subseq_len: int) -> Batch:
        W = self.window
        act, acc, pri, cur, nxt, acts, rews, dones = [], [], [], [], [], [], [], []
        offset = 0
        for _ in range(batch):
            ep = self.episodes[rng.integers(len(self.episodes))]
            L = min(subseq_len, ep.n_steps)
            s = int(rng.integers(ep.n_steps - L + 1))
            days = np.arange(s, s + L + 1)
            idx = days[:, None] + np.arange(W)[None, :]
            act.append(ep.act_idx[idx])
            acc.append(ep.account[idx])
            pri.append(ep.prices[idx])
            cur.append(offset + np.arange(L))
            nxt.append(offset + np.arange(1, L + 1))
            acts.append(ep.actions[s:s + L])
            rews.append(ep.rewards[s:s + L])
            dones.append(np.arange(s, s + L) == ep.n_steps - 1)
            offset += L + 1
        return Batch(nn.Windows(np.concatenate(act), np.concatenate(acc),
                                np.concatenate(pri)),
                     np.concatenate(cur), np.concatenate(nxt), np.concatenate(acts),
                     np.concatenate(rews), np.concatenate(dones))


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------

class EvalResult(NamedTuple):
    actions: np.ndarray  # one per day; the final day is flat
    returns: np.ndarray
    trace: list


class TrainResult(NamedTuple):
    params: nn.QParams
    log: list[dict]


def epsilon_at(step: int, total_steps: int, cfg: AgentConfig) -> float:
    horizon = cfg.epsilon_decay_fraction * total_steps
    if horizon <= 0:
        return cfg.epsilon_end
    frac = min(1.0, step / horizon)
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


def _window(env: PairTradingEnv, W: int) -> nn.Windows:
    return nn.Windows.single(*env.history(W))


def evaluate(params: nn.QParams, date_range, pair: PairSeries,
             env_cfg: EnvConfig | None = None,
             features: Features | None = None) -> EvalResult:
    """Greedy rollout over ``date_range`` as a single episode."""
    env_cfg = env_cfg or EnvConfig()
    env = PairTradingEnv(pair, env_cfg, features)
    env.reset(date_range)
    W = env_cfg.window_days
    rng = np.random.default_rng(0)  # unused at epsilon 0
    while not env.done:
        env.step(select_action(_window(env, W), params, 0.0, rng))
    return EvalResult(env.actions, np.asarray(env.episode_returns()), env.trace())


def _episode_bounds(idx: np.ndarray, days: int) -> tuple[int, int, int]:
    if len(idx) < 2:
        raise RangeOutOfBounds("training range holds fewer than 2 days")
    length = min(days, len(idx))
    return int(idx[0]), int(idx[-1]) - length + 1, length


def train(rolling: RollingSplit, pair: PairSeries, cfg: AgentConfig,
          env_cfg: EnvConfig | None = None, features: Features | None = None,
          progress=None) -> TrainResult:
    """Train on ``rolling.train`` and keep the parameters with the best
    validation objective.

    ``features`` defaults to log features standardised on the training
    range. ``progress`` is an optional callback receiving each log row.
    """
    env_cfg = env_cfg or EnvConfig()
    if features is None:
        features = log_normalize(pair, rolling.train)
    rng = np.random.default_rng([cfg.seed, rolling.index])
    online = nn.init_params(cfg.net_spec, rng)
    history: list[dict] = []
    if cfg.episodes_per_rolling <= 0:
        return TrainResult(online, history)

    target = sync_target(online)
    opt = nn.Adam(nn.AdamConfig(lr=cfg.lr, clip_norm=cfg.clip_norm))
    env = PairTradingEnv(pair, env_cfg, features)
    W = env_cfg.window_days
    replay = EpisodeReplay(cfg.replay_capacity, W)
    lo, hi, length = _episode_bounds(rolling.train.indices(pair.dates), cfg.episode_days)
    val_idx = rolling.validation.indices(pair.dates)
    total_steps = cfg.episodes_per_rolling * (length - 1)
    alpha = cfg.reward.alpha

    best, best_val = online.copy(), -math.inf
    env_steps = grad_steps = 0
    for episode in range(1, cfg.episodes_per_rolling + 1):
        start = int(rng.integers(lo, hi + 1))
        env.reset((start, start + length - 1))
        eps = epsilon_at(env_steps, total_steps, cfg)
        while not env.done:
            eps = epsilon_at(env_steps, total_steps, cfg)
            env.step(select_action(_window(env, W), online, eps, rng))
            env_steps += 1
        returns = np.asarray(env.episode_returns())
        rewards = per_step_rewards(returns, cfg.reward) * cfg.reward_scale
        act_idx, account, prices = env.rows(start - W + 1, env.day)
        replay.add(EpisodeRecord(act_idx, account, prices,
                                 env.actions[:-1] + 1, rewards))

        losses = []
        if len(replay) >= cfg.warmup_episodes:
            for _ in range(max(1, round(cfg.train_ratio * len(returns)))):
                batch = replay.sample(rng, cfg.batch, cfg.subseq_len)
                loss, online = td_update(batch, online, target, cfg.gamma, opt)
                losses.append(loss)
                grad_steps += 1
                if grad_steps % cfg.target_sync_every == 0:
                    target = sync_target(online)

        val_obj = None
        if len(val_idx) >= 2 and (episode % cfg.eval_every == 0
                                  or episode == cfg.episodes_per_rolling):
            res = evaluate(online, (int(val_idx[0]), int(val_idx[-1])), pair,
                           env_cfg, features)
            val_obj = risk_aware_objective(res.returns, alpha)
            if val_obj > best_val:
                best, best_val = online.copy(), val_obj
        row = {
            "episode": episode,
            "steps": env_steps,
            "epsilon": eps,
            "mean_loss": float(np.mean(losses)) if losses else None,
            "train_objective": risk_aware_objective(returns, alpha),
            "val_objective": val_obj,
        }
        history.append(row)
        if progress is not None:
            progress(row)
    if len(val_idx) < 2:
        best = online
    return TrainResult(best, history)


LOG_COLUMNS = ("episode", "steps", "epsilon", "mean_loss", "train_objective",
               "val_objective")


def write_training_log(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow(["" if row[c] is None else repr(row[c]) for c in LOG_COLUMNS])


def with_method(cfg: AgentConfig, encoder: str, mode: str) -> AgentConfig:
    return replace(cfg, encoder=encoder, reward=replace(cfg.reward, mode=mode))
