"""Built-in self-checks that need no data files."""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

from . import nn
from .backtest import (
    annualized_return,
    annualized_volatility,
    max_drawdown,
    sharpe_ratio,
    trading_activity,
)
from .env import EnvConfig, PairTradingEnv
from .marketdata import AssetSeries, PairSeries
from .pairselect import engle_granger
from .reward import (
    PROFIT_ONLY,
    RISK_AWARE,
    RewardConfig,
    per_step_rewards,
    risk_aware_objective,
)
from .synthetic import business_days


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _random_windows(spec: nn.NetSpec, rng, batch=3, length=5) -> nn.Windows:
    return nn.Windows(rng.integers(0, 3, (batch, length)),
                      rng.normal(size=(batch, length, spec.n_account)),
                      rng.normal(size=(batch, length, spec.n_price)))


def check_gradients(seeds=range(3), corrupt: bool = False, tol: float = 1e-4) -> CheckResult:
    """Finite differences against backprop for both encoders. ``corrupt``
    perturbs the analytic gradient to prove the check can fail."""
    worst = 0.0
    for seed in seeds:
        for encoder in (nn.BIGRU, nn.FEEDFORWARD):
            rng = np.random.default_rng(seed)
            spec = nn.NetSpec(encoder=encoder, d_a=2, d_h=4, hidden=6)
            params = nn.init_params(spec, rng)
            w = _random_windows(spec, rng)
            target = rng.normal(size=(len(w), nn.N_ACTIONS))

            def loss(q):
                d = q - target
                return 0.5 * float(np.sum(d * d)), d

            grads = None
            if corrupt:
                q, tape = nn.forward(params, w)
                grads = nn.backward(params, tape, loss(q)[1])
                name = "fwd_U" if encoder == nn.BIGRU else "ff_W"
                grads[name] = grads[name] * 1.1
            worst = max(worst, nn.finite_difference_check(params, w, loss, grads=grads))
    return CheckResult("gradient check", worst < tol, f"max rel err {worst:.2e}")


def check_telescoping(n: int = 200, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        r = rng.normal(0, 0.02, rng.integers(1, 80))
        alpha = float(rng.uniform(0, 3))
        a = per_step_rewards(r, RewardConfig(RISK_AWARE, alpha)).sum()
        b = risk_aware_objective(r, alpha)
        worst = max(worst, abs(a - b) / max(1.0, abs(b)))
        a = per_step_rewards(r, RewardConfig(PROFIT_ONLY)).sum()
        b = math.log(np.prod(1 + r))
        worst = max(worst, abs(a - b) / max(1.0, abs(b)))
    return CheckResult("reward telescoping", worst < tol, f"max rel err {worst:.1e}")


def check_metrics() -> CheckResult:
    cases = [
        ("AR 126d", annualized_return([1.05 ** (1 / 126) - 1] * 126), 0.1025, 1e-12),
        ("MDD", max_drawdown([1, 1.1, 0.99, 1.2]), 0.1, 1e-12),
        ("AV", annualized_volatility([0.01, -0.01] * 10), 0.01 * math.sqrt(252), 1e-12),
        ("SR", sharpe_ratio([0.01, -0.01, 0.02, 0.0]),
         (0.005 - 0.000085) / np.std([0.01, -0.01, 0.02, 0.0]), 1e-12),
    ]
    bad = [f"{name}={got!r}" for name, got, want, tol in cases if abs(got - want) > tol]
    if trading_activity([0, 1, 1, 0, 0, -1, 0]) != (1.5, 2, 2.0):
        bad.append("activity")
    if trading_activity([1, -1, 1]) != (1.0, 3, 0.0):
        bad.append("sign flips")
    return CheckResult("metric oracles", not bad, ", ".join(bad) or f"{len(cases) + 2} cases")


def _oracle_equity(close_x, close_y, actions, cost) -> list[float]:
    net, prev, out = 1.0, 0, [1.0]
    for t, a in enumerate(actions[:-1]):
        rx = close_x[t + 1] / close_x[t] - 1.0
        ry = close_y[t + 1] / close_y[t] - 1.0
        net *= 1.0 + a * (rx - ry) - cost * abs(a - prev)
        prev = a
        out.append(net)
    return out


def check_environment(n: int = 50, seed: int = 0, tol: float = 1e-12) -> CheckResult:
    rng = np.random.default_rng(seed)
    dates = business_days("2020-01-01", "2020-03-31")
    worst = 0.0
    for _ in range(n):
        days = int(rng.integers(2, 40))
        d = dates[:days]
        cx = 20 * np.exp(np.cumsum(rng.normal(0, 0.02, days)))
        cy = 30 * np.exp(np.cumsum(rng.normal(0, 0.02, days)))
        vol = np.full(days, 1e5)
        pair = PairSeries(AssetSeries("X", d, cx, cx, vol), AssetSeries("Y", d, cy, cy, vol))
        cost = float(rng.uniform(0, 0.005))
        env = PairTradingEnv(pair, EnvConfig(cost=cost, window_days=5))
        env.reset((0, days - 1))
        acts = [int(a) for a in rng.integers(-1, 2, days)]
        for a in acts[:-1]:
            env.step(a)
        got = env.equity_curve()
        want = _oracle_equity(cx, cy, acts, cost)
        worst = max(worst, float(np.max(np.abs(np.asarray(got) - want))))
    return CheckResult("environment oracle", worst < tol, f"max abs err {worst:.1e}")


def check_cointegration(n: int = 30, seed: int = 0, length: int = 750) -> CheckResult:
    """Planted AR(1) residual pairs should test cointegrated; independent
    random walks mostly should not."""
    hits = false_hits = 0
    for k in range(n):
        rng = np.random.default_rng([seed, k])
        x = np.cumsum(rng.normal(size=length))
        e = np.zeros(length)
        shocks = rng.normal(size=length)
        for t in range(1, length):
            e[t] = 0.5 * e[t - 1] + shocks[t]
        hits += engle_granger(2 * x + e, x).p_value < 0.05
        z = np.cumsum(rng.normal(size=length))
        false_hits += engle_granger(z, x).p_value < 0.05
    power, size = hits / n, false_hits / n
    ok = power >= 0.95 and size <= 0.10
    return CheckResult("cointegration Monte Carlo", ok, f"power {power:.2f}, size {size:.2f}")


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "gradients": check_gradients,
    "telescoping": check_telescoping,
    "metrics": check_metrics,
    "environment": check_environment,
    "cointegration": check_cointegration,
}


def run_checks(corrupt_gradient: bool = False) -> list[CheckResult]:
    out = []
    for name, fn in CHECKS.items():
        kwargs = {"corrupt": True} if name == "gradients" and corrupt_gradient else {}
        try:
            out.append(fn(**kwargs))
        except Exception as exc:  # a crashing check is a failed check
            out.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))
    return out


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}"
             for r in results]
    return "\n".join(lines)
