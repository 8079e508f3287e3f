"""Experiment configuration: a YAML tree with defaults, dotted overrides,
strict key checking and a content hash."""

from __future__ import annotations

import copy
import datetime as dt
import hashlib
import json
import os
from dataclasses import fields
from pathlib import Path

import yaml

from . import nn
from .agent import AgentConfig
from .backtest import MetricsConfig
from .env import EnvConfig
from .errors import ConfigError, MissingFile
from .marketdata import DateRange
from .reward import PROFIT_ONLY, RISK_AWARE, RewardConfig

# method name -> (encoder, reward mode); None marks a rule-based method
METHODS = {
    "credit": (nn.BIGRU, RISK_AWARE),
    "credit_no_risk": (nn.BIGRU, PROFIT_ONLY),
    "credit_no_bigru": (nn.FEEDFORWARD, RISK_AWARE),
    "mlp_rl": (nn.FEEDFORWARD, PROFIT_ONLY),
    "cpm": None,
    "bah_long": None,
    "bah_short": None,
}
# row labels of the results table
METHOD_LABELS = {
    "credit": "CREDIT",
    "credit_no_risk": "w/o risk",
    "credit_no_bigru": "w/o Bi-GRU",
    "mlp_rl": "MLP-RL",
    "cpm": "CPM",
    "bah_long": "BAH-Long",
    "bah_short": "BAH-Short",
}

OUTPUT_ENV = "CREDIT_PAIRS_OUTPUT"

_AGENT_KEYS = [f.name for f in fields(AgentConfig)
               if f.name not in ("reward", "seed", "encoder")]

DEFAULTS = {
    "method": "credit",
    "seed": 0,
    "output_dir": "runs",
    "workers": 1,
    "data": {
        "source": "files",  # files | synthetic
        "dir": "data",
        "symbols": [],  # empty: every *.csv in dir
        "pair": "auto",  # "auto" or [symbol_x, symbol_y]
        "selection_range": None,  # [start, end]; None: the full sample
    },
    "synthetic": {
        "seed": 0,
        "start": "2015-01-02",
        "end": "2018-12-31",
        "half_life": 10.0,
        "spread_vol": 0.01,
        "market_vol": 0.005,
        "beta": 1.0,
    },
    "rolling": {
        "window_months": 18,
        "stride_months": 3,
        "split": [12, 3, 3],
        "indices": None,  # subset of rolling indices; None: all
    },
    "env": {"cost": 0.001, "window_days": 60, "initial_net": 1.0},
    "agent": {k: getattr(AgentConfig(), k) for k in _AGENT_KEYS},
    "reward": {"mode": RISK_AWARE, "alpha": 0.5},
    "alpha_grid": [0.1, 0.5, 1.0, 2.0],  # tuned per rolling; [] keeps reward.alpha
    "metrics": {"risk_free_daily": 0.000085, "trading_days_per_year": 252},
    "cpm": {"open_threshold": 1.0, "stop_threshold": 2.0},
}

# keys that change where and how fast results are produced, not what they are
_UNHASHED = ("output_dir", "workers")


def _plain(value):
    """YAML scalars to JSON-stable values (dates become ISO strings)."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (dt.date, dt.datetime)):
        return value.isoformat()
    return value


def _merge(base: dict, update: dict, path: str = "") -> dict:
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a mapping")
            _merge(base[key], value, where + ".")
        else:
            base[key] = value
    return base


def parse_override(text: str) -> tuple[list[str], object]:
    """``a.b.c=value`` with the value read as YAML (so ``0.5`` is a float
    and ``[1, 2]`` a list)."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not key=value")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"malformed override key '{key}'")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value of '{key}': {exc}") from exc
    return parts, _plain(value)


def _nest(parts: list[str], value) -> dict:
    out = value
    for p in reversed(parts):
        out = {p: out}
    return out


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the YAML file at ``path`` (if any), then overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        _merge(cfg, _plain(doc))
    for text in overrides:
        parts, value = parse_override(text)
        _merge(cfg, _nest(parts, value))
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if cfg["method"] not in METHODS:
        raise ConfigError(f"unknown method '{cfg['method']}'; "
                          f"choose from {sorted(METHODS)}")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    if not isinstance(cfg["workers"], int) or cfg["workers"] < 1:
        raise ConfigError("workers must be a positive integer")
    data = cfg["data"]
    if data["source"] not in ("files", "synthetic"):
        raise ConfigError("data.source must be 'files' or 'synthetic'")
    pair = data["pair"]
    if pair != "auto" and not (isinstance(pair, list) and len(pair) == 2
                               and all(isinstance(s, str) for s in pair)):
        raise ConfigError("data.pair must be 'auto' or a list of two symbols")
    if data["source"] == "files":
        d = Path(data["dir"])
        if not d.is_dir():
            raise ConfigError(f"data.dir does not exist: {d}")
        wanted = list(pair) if pair != "auto" else list(data["symbols"])
        for sym in wanted:
            if not (d / f"{sym}.csv").is_file():
                raise MissingFile(f"no data file for symbol '{sym}': {d / (sym + '.csv')}")
    selection_range(cfg)
    roll = cfg["rolling"]
    if (not isinstance(roll["split"], list) or len(roll["split"]) != 3
            or sum(roll["split"]) != roll["window_months"]):
        raise ConfigError("rolling.split must be three month counts adding up to "
                          "rolling.window_months")
    grid = cfg["alpha_grid"]
    if not isinstance(grid, list) or any(not isinstance(a, (int, float)) or a < 0
                                         for a in grid):
        raise ConfigError("alpha_grid must be a list of nonnegative numbers")
    # constructing the typed configs runs their own checks
    try:
        env_config(cfg)
        agent_config(cfg)
        MetricsConfig(**cfg["metrics"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    o, s = cfg["cpm"]["open_threshold"], cfg["cpm"]["stop_threshold"]
    if not 0 < o < s:
        raise ConfigError("need 0 < cpm.open_threshold < cpm.stop_threshold")


def _date(text) -> dt.date:
    try:
        return dt.date.fromisoformat(str(text))
    except ValueError as exc:
        raise ConfigError(f"bad date '{text}'") from exc


def selection_range(cfg: dict) -> DateRange | None:
    r = cfg["data"]["selection_range"]
    if r is None:
        return None
    if not isinstance(r, list) or len(r) != 2:
        raise ConfigError("data.selection_range must be [start, end] or null")
    return DateRange(_date(r[0]), _date(r[1]))


def env_config(cfg: dict) -> EnvConfig:
    return EnvConfig(**cfg["env"])


def agent_config(cfg: dict, alpha: float | None = None) -> AgentConfig:
    """AgentConfig for an RL method; rule-based methods get the defaults."""
    spec = METHODS[cfg["method"]]
    encoder, mode = spec if spec is not None else (nn.BIGRU, cfg["reward"]["mode"])
    a = cfg["reward"]["alpha"] if alpha is None else alpha
    agent = dict(cfg["agent"])
    if agent.get("clip_norm") is not None:
        agent["clip_norm"] = float(agent["clip_norm"])
    return AgentConfig(**agent, encoder=encoder, seed=cfg["seed"],
                       reward=RewardConfig(mode=mode, alpha=float(a)))


def metrics_config(cfg: dict) -> MetricsConfig:
    return MetricsConfig(**cfg["metrics"])


def canonical_json(cfg: dict) -> str:
    return json.dumps(_plain(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


def output_root(cfg: dict) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg["output_dir"])
