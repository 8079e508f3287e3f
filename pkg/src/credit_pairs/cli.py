"""Command line entry point: ``credit-pairs <subcommand>``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import config as C
from .backtest import load_report, write_table
from .errors import CreditError
from .marketdata import write_eod_csv

log = logging.getLogger("credit_pairs")

PAIR_COLUMNS = ("symbol_x", "symbol_y", "beta", "statistic", "p_value", "lags")


def _config(args) -> dict:
    return C.load_config(args.config, args.set or ())


def cmd_select_pairs(args) -> int:
    from .runner import select_pairs

    cfg = _config(args)
    skipped: list = []
    ranked = select_pairs(cfg, skipped)
    if args.top is not None:
        ranked = ranked[:args.top]
    out = Path(args.out) if args.out else C.output_root(cfg) / "pairs.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIR_COLUMNS)
        for r in ranked:
            res = r.result
            w.writerow([r.symbol_x, r.symbol_y, repr(res.beta), repr(res.statistic),
                        repr(res.p_value), res.lags])
    for sx, sy, reason in skipped:
        print(f"skipped {sx}/{sy}: {reason}", file=sys.stderr)
    print(out)
    return 0


def cmd_run(args) -> int:
    from .runner import run_experiment

    cfg = _config(args)
    report, run_dir = run_experiment(cfg, args.out)
    failed = [r for r in report.rollings if "error" in r]
    for r in failed:
        print(f"rolling {r['index']} failed: {r['error']}", file=sys.stderr)
    print(run_dir)
    if not report.aggregate:
        print("no rolling completed", file=sys.stderr)
        return 1
    return 1 if failed else 0


def cmd_verify(args) -> int:
    from .verify import format_table, run_checks

    results = run_checks(corrupt_gradient=args.corrupt_gradient)
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


def cmd_report(args) -> int:
    reports = [load_report(p) for p in args.reports]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table(reports, out)
    print(out)
    return 0


def cmd_make_synthetic(args) -> int:
    from .synthetic import ou_pair

    pair = ou_pair(args.seed, args.start, args.end, half_life=args.half_life,
                   spread_vol=args.spread_vol, market_vol=args.market_vol,
                   symbols=(args.symbol_x, args.symbol_y))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for leg in (pair.x, pair.y):
        write_eod_csv(leg, out / f"{leg.symbol}.csv")
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="credit-pairs", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", "-c", help="YAML experiment config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")

    sp = sub.add_parser("select-pairs", help="rank candidate pairs by cointegration p-value")
    with_config(sp)
    sp.add_argument("--top", type=int, help="keep only the best N pairs")
    sp.add_argument("--out", help="output CSV (default: <output root>/pairs.csv)")
    sp.set_defaults(func=cmd_select_pairs)

    sp = sub.add_parser("run", help="run the rolling backtest for one method")
    with_config(sp)
    sp.add_argument("--out", help="run directory (default: <output root>/<method>-<hash>)")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("verify", help="run the built-in self-checks")
    sp.add_argument("--corrupt-gradient", action="store_true",
                    help="perturb analytic gradients (the gradient check must fail)")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("report", help="combine report JSON files into one table")
    sp.add_argument("reports", nargs="+", help="report.json files")
    sp.add_argument("--out", default="table.csv", help="output CSV")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("make-synthetic", help="write an OU cointegrated pair as CSVs")
    sp.add_argument("--out", required=True, help="directory for the two CSV files")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--start", default="2015-01-02")
    sp.add_argument("--end", default="2018-12-31")
    sp.add_argument("--half-life", type=float, default=10.0)
    sp.add_argument("--spread-vol", type=float, default=0.01)
    sp.add_argument("--market-vol", type=float, default=0.005)
    sp.add_argument("--symbol-x", default="SYNX")
    sp.add_argument("--symbol-y", default="SYNY")
    sp.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CreditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
