"""Return/risk and trading-activity metrics, cross-rolling aggregation and
report files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NonPositiveEquity, TooFewReturns, ZeroDispersion

# column order of the results table
METRICS = ("SR", "AR", "MDD", "AV", "AHD", "TT", "ABD")
PERCENT_METRICS = ("AR", "MDD", "AV")


@dataclass(frozen=True)
class MetricsConfig:
    risk_free_daily: float = 0.000085
    trading_days_per_year: int = 252

    def __post_init__(self):
        if self.trading_days_per_year <= 0:
            raise ValueError("trading_days_per_year must be positive")


def sharpe_ratio(returns, cfg: MetricsConfig = MetricsConfig()) -> float:
    """Daily ``(mean - R_f) / stdev`` with the population stdev."""
    r = np.asarray(returns, dtype=float)
    if len(r) < 2:
        raise TooFewReturns("Sharpe ratio needs at least 2 returns")
    sd = r.std()
    if sd <= 1e-15 * max(1.0, abs(r.mean())):
        raise ZeroDispersion("returns have no dispersion")
    return float((r.mean() - cfg.risk_free_daily) / sd)


def annualized_return(returns, cfg: MetricsConfig = MetricsConfig()) -> float:
    r = np.asarray(returns, dtype=float)
    if len(r) == 0:
        raise TooFewReturns("no returns")
    growth = float(np.prod(1.0 + r))
    if not growth > 0:
        raise NonPositiveEquity(f"final equity multiple {growth}")
    return growth ** (cfg.trading_days_per_year / len(r)) - 1.0


def annualized_return_from_curve(equity, cfg: MetricsConfig = MetricsConfig()) -> float:
    e = np.asarray(equity, dtype=float)
    if len(e) < 2 or np.any(e <= 0):
        raise NonPositiveEquity("need at least 2 positive equity values")
    return (e[-1] / e[0]) ** (cfg.trading_days_per_year / (len(e) - 1)) - 1.0


def max_drawdown(equity) -> float:
    e = np.asarray(equity, dtype=float)
    if len(e) == 0:
        return 0.0
    if np.any(e <= 0):
        raise NonPositiveEquity("equity must stay positive")
    peak = np.maximum.accumulate(e)
    return float(np.max((peak - e) / peak))


def annualized_volatility(returns, cfg: MetricsConfig = MetricsConfig()) -> float:
    r = np.asarray(returns, dtype=float)
    if len(r) < 2:
        raise TooFewReturns("volatility needs at least 2 returns")
    return float(r.std() * math.sqrt(cfg.trading_days_per_year))


def trading_activity(actions) -> tuple[float, int, float]:
    """``(AHD, TT, ABD)`` of a per-day action sequence.

    A trade is a maximal run of one nonzero action, so a direct flip from
    long to short closes one trade and opens another. ABD averages the flat
    gaps lying strictly between consecutive trades; back-to-back trades
    contribute a gap of zero days.
    """
    a = [int(v) for v in actions]
    runs = []  # (value, start, length)
    for i, v in enumerate(a):
        if runs and runs[-1][0] == v and runs[-1][1] + runs[-1][2] == i:
            runs[-1][2] += 1
        else:
            runs.append([v, i, 1])
    trades = [r for r in runs if r[0] != 0]
    tt = len(trades)
    if tt == 0:
        return 0.0, 0, 0.0
    ahd = sum(r[2] for r in trades) / tt
    if tt < 2:
        return ahd, tt, 0.0
    gaps = [b[1] - (p[1] + p[2]) for p, b in zip(trades, trades[1:])]
    return ahd, tt, sum(gaps) / len(gaps)


def rolling_metrics(returns, actions, cfg: MetricsConfig = MetricsConfig()) -> dict:
    """All table metrics for one rolling. AR/MDD/AV are fractions here;
    the rendered table shows them in percent. A flat return series has an
    undefined Sharpe ratio, reported as 0."""
    r = np.asarray(returns, dtype=float)
    equity = np.concatenate([[1.0], np.cumprod(1.0 + r)])
    try:
        sr = sharpe_ratio(r, cfg)
    except ZeroDispersion:
        sr = 0.0
    ahd, tt, abd = trading_activity(actions)
    return {
        "SR": sr,
        "AR": annualized_return(r, cfg),
        "MDD": max_drawdown(equity),
        "AV": annualized_volatility(r, cfg),
        "AHD": ahd,
        "TT": tt,
        "ABD": abd,
    }


def aggregate(per_rolling: list[dict]) -> dict:
    """Mean and sample stdev of every metric across rollings (stdev 0 for a
    single rolling)."""
    if not per_rolling:
        raise ValueError("nothing to aggregate")
    out = {}
    for m in METRICS:
        vals = np.array([r[m] for r in per_rolling], dtype=float)
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[m] = {"mean": float(vals.mean()), "std": std}
    return out


@dataclass
class BacktestReport:
    method: str
    config_hash: str
    rollings: list[dict]  # {index, metrics, trace_path} or {index, error}
    aggregate: dict

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "config_hash": self.config_hash,
            "rollings": self.rollings,
            "aggregate": self.aggregate,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BacktestReport":
        return cls(doc["method"], doc["config_hash"], doc["rollings"], doc["aggregate"])

    @classmethod
    def build(cls, method: str, config_hash: str, rollings: list[dict]) -> "BacktestReport":
        ok = [r["metrics"] for r in rollings if "metrics" in r]
        agg = aggregate(ok) if ok else {}
        return cls(method, config_hash, rollings, agg)


def table_row(report: BacktestReport) -> list[str]:
    cells = [report.method]
    for m in METRICS:
        if m not in report.aggregate:
            cells.append("")
            continue
        scale = 100.0 if m in PERCENT_METRICS else 1.0
        mean = report.aggregate[m]["mean"] * scale
        std = report.aggregate[m]["std"] * scale
        # round first so tiny negatives do not render as -0.00
        cells.append(f"{round(mean, 2) + 0.0:.2f} ± {round(std, 2) + 0.0:.2f}")
    return cells


TABLE_HEADER = ("Model", "SR", "AR(%)", "MDD(%)", "AV(%)", "AHD", "TT", "ABD")


def write_table(reports: list[BacktestReport], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for rep in reports:
            w.writerow(table_row(rep))


def render_report(report: BacktestReport, out_dir) -> dict[str, Path]:
    """Write ``report.json`` and ``summary.csv`` under ``out_dir``. Trace
    CSVs are written by the runner and referenced by relative path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    json_path.write_text(json.dumps(report.to_json(), sort_keys=True, indent=2) + "\n",
                         encoding="utf-8")
    table_path = out / "summary.csv"
    write_table([report], table_path)
    return {"json": json_path, "table": table_path}


def load_report(path) -> BacktestReport:
    return BacktestReport.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
