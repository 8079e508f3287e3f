"""Rolling-window experiments: data resolution, per-rolling training or
rule configuration, test evaluation and report assembly."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as C
from .agent import evaluate, train, write_training_log
from .backtest import BacktestReport, render_report, rolling_metrics
from .baselines import bah_policy, cpm_policy, fit_cpm
from .env import PairTradingEnv, run_actions, write_trace_csv
from .errors import CreditError, MissingFile
from .marketdata import (
    AssetSeries,
    PairSeries,
    RollingSplit,
    align_pair,
    load_eod_csv,
    log_normalize,
    make_rollings,
)
from .nn import save_params
from .pairselect import RankedPair, rank_pairs
from .reward import risk_aware_objective
from .synthetic import ou_pair

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

def load_universe(cfg: dict) -> list[AssetSeries]:
    d = Path(cfg["data"]["dir"])
    symbols = cfg["data"]["symbols"]
    if symbols:
        paths = [d / f"{s}.csv" for s in symbols]
    else:
        paths = sorted(d.glob("*.csv"))
    if not paths:
        raise MissingFile(f"no CSV files in {d}")
    return [load_eod_csv(p) for p in paths]


def select_pairs(cfg: dict, skipped: list | None = None) -> list[RankedPair]:
    return rank_pairs(load_universe(cfg), C.selection_range(cfg), skipped)


def resolve_pair(cfg: dict) -> PairSeries:
    """The configured pair: synthetic, two named files, or the best-ranked
    pair of the universe."""
    data = cfg["data"]
    if data["source"] == "synthetic":
        s = cfg["synthetic"]
        return ou_pair(s["seed"], s["start"], s["end"], half_life=s["half_life"],
                       spread_vol=s["spread_vol"], market_vol=s["market_vol"],
                       beta=s["beta"])
    if data["pair"] == "auto":
        ranked = select_pairs(cfg)
        if not ranked:
            raise CreditError("pair selection produced no testable pair")
        sx, sy = ranked[0].symbol_x, ranked[0].symbol_y
        log.info("selected pair %s/%s (p=%.4g)", sx, sy, ranked[0].result.p_value)
    else:
        sx, sy = data["pair"]
    d = Path(data["dir"])
    return align_pair(load_eod_csv(d / f"{sx}.csv"), load_eod_csv(d / f"{sy}.csv"))


def rollings_for(cfg: dict, pair: PairSeries) -> list[RollingSplit]:
    r = cfg["rolling"]
    out = make_rollings(pair, r["window_months"], r["stride_months"], tuple(r["split"]))
    if r["indices"] is not None:
        wanted = set(r["indices"])
        out = [s for s in out if s.index in wanted]
    return out


# ---------------------------------------------------------------------------
# One rolling
# ---------------------------------------------------------------------------

def _span(pair: PairSeries, rng) -> tuple[int, int]:
    idx = rng.indices(pair.dates)
    if len(idx) < 2:
        raise CreditError(f"fewer than 2 trading days in {rng}")
    return int(idx[0]), int(idx[-1])


def _train_rl(cfg: dict, rolling: RollingSplit, pair: PairSeries, features, out_dir: Path):
    """Train (tuning alpha on validation when a grid is given) and return
    the chosen parameters plus the alpha used."""
    env_cfg = C.env_config(cfg)
    base = C.agent_config(cfg)
    grid = cfg["alpha_grid"] if base.reward.mode == "risk_aware" else []
    candidates = [float(a) for a in grid] or [base.reward.alpha]
    ref_alpha = float(cfg["reward"]["alpha"])
    val = _span(pair, rolling.validation)
    best = None
    for alpha in candidates:
        agent = replace(base, reward=replace(base.reward, alpha=alpha))
        res = train(rolling, pair, agent, env_cfg, features)
        suffix = "" if len(candidates) == 1 else f"_alpha{alpha:g}"
        write_training_log(res.log, out_dir / f"training_log{suffix}.csv")
        if len(candidates) == 1:
            best = (res.params, alpha)
            break
        # candidates trained under different alphas are compared on one scale
        score = risk_aware_objective(
            evaluate(res.params, val, pair, env_cfg, features).returns, ref_alpha)
        if best is None or score > best[2]:
            best = (res.params, alpha, score)
    return best[0], best[1]


def run_rolling(cfg: dict, pair: PairSeries, rolling: RollingSplit, run_dir: Path) -> dict:
    """Evaluate the configured method on one rolling's test range."""
    method = cfg["method"]
    rel = Path(f"rolling_{rolling.index:02d}")
    out_dir = run_dir / rel
    out_dir.mkdir(parents=True, exist_ok=True)
    env_cfg = C.env_config(cfg)
    test = _span(pair, rolling.test)
    entry = {"index": rolling.index, "test": [str(rolling.test.start), str(rolling.test.end)]}
    if C.METHODS[method] is not None:
        features = log_normalize(pair, rolling.train)
        params, alpha = _train_rl(cfg, rolling, pair, features, out_dir)
        save_params(params, out_dir / "params.json")
        ev = evaluate(params, test, pair, env_cfg, features)
        actions, returns, trace = ev.actions, ev.returns, ev.trace
        entry["alpha"] = alpha
    else:
        env = PairTradingEnv(pair, env_cfg)
        n_days = test[1] - test[0] + 1
        if method == "cpm":
            c = cfg["cpm"]
            fitted = fit_cpm(pair, rolling.train, c["open_threshold"], c["stop_threshold"])
            actions = cpm_policy(pair, rolling.test, fitted)
            entry["cpm"] = {"beta": fitted.beta, "mean": fitted.mean, "std": fitted.std}
        else:
            actions = bah_policy(1 if method == "bah_long" else -1, n_days)
        returns = run_actions(env, test, actions)
        trace = env.trace()
    write_trace_csv(trace, out_dir / "trace.csv")
    entry["metrics"] = rolling_metrics(np.asarray(returns), actions, C.metrics_config(cfg))
    entry["trace_path"] = (rel / "trace.csv").as_posix()
    return entry


def _run_one(args) -> dict:
    cfg, pair, rolling, run_dir = args
    try:
        return run_rolling(cfg, pair, rolling, run_dir)
    except (CreditError, ValueError, ArithmeticError) as exc:
        log.error("rolling %d failed: %s", rolling.index, exc)
        return {"index": rolling.index, "error": f"{type(exc).__name__}: {exc}"}


# ---------------------------------------------------------------------------
# Whole experiment
# ---------------------------------------------------------------------------

def run_dir_for(cfg: dict) -> Path:
    return C.output_root(cfg) / f"{cfg['method']}-{C.config_hash(cfg)[:12]}"


def run_experiment(cfg: dict, run_dir: Path | None = None) -> tuple[BacktestReport, Path]:
    """Run every rolling, write traces, the report JSON and the summary
    table; failed rollings are recorded and skipped."""
    run_dir = Path(run_dir) if run_dir is not None else run_dir_for(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    pair = resolve_pair(cfg)
    rollings = rollings_for(cfg, pair)
    jobs = [(cfg, pair, r, run_dir) for r in rollings]
    if cfg["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            entries = list(pool.map(_run_one, jobs))
    else:
        entries = [_run_one(j) for j in jobs]
    entries.sort(key=lambda e: e["index"])
    report = BacktestReport.build(C.METHOD_LABELS[cfg["method"]], C.config_hash(cfg), entries)
    render_report(report, run_dir)
    (run_dir / "config.json").write_text(C.canonical_json(cfg) + "\n", encoding="utf-8")
    return report, run_dir
