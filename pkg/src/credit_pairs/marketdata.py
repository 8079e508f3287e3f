"""End-of-day price ingestion, pair alignment, features and rolling splits."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateDate,
    IndexOutOfRange,
    InsufficientOverlap,
    MalformedRow,
    MissingFile,
    NonPositivePrice,
    SampleTooShort,
    ZeroVariance,
)

CSV_HEADER = ("date", "open", "close", "volume")
FEATURE_CHANNELS = ("x_open", "x_close", "x_volume", "y_open", "y_close", "y_volume")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AssetSeries:
    """Daily open/close/volume for one symbol, strictly increasing in date."""

    symbol: str
    dates: np.ndarray  # datetime64[D]
    open: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", _frozen(self.dates, "datetime64[D]"))
        for name in ("open", "close", "volume"):
            object.__setattr__(self, name, _frozen(getattr(self, name), float))
        n = len(self.dates)
        if not (len(self.open) == len(self.close) == len(self.volume) == n):
            raise ValueError("column lengths differ")
        if n > 1:
            steps = np.diff(self.dates).astype(int)
            if np.any(steps == 0):
                raise DuplicateDate(f"{self.symbol}: duplicate date")
            if np.any(steps < 0):
                raise ValueError(f"{self.symbol}: dates not increasing")
        if np.any(~np.isfinite(self.open)) or np.any(~np.isfinite(self.close)):
            raise NonPositivePrice(f"{self.symbol}: non-finite price")
        if np.any(self.open <= 0) or np.any(self.close <= 0):
            raise NonPositivePrice(f"{self.symbol}: non-positive price")
        if np.any(self.volume < 0) or np.any(~np.isfinite(self.volume)):
            raise ValueError(f"{self.symbol}: negative volume")

    def __len__(self):
        return len(self.dates)

    @property
    def rows(self):
        return [
            (d.item(), o, c, v)
            for d, o, c, v in zip(self.dates, self.open, self.close, self.volume)
        ]

    def take(self, idx) -> "AssetSeries":
        return AssetSeries(self.symbol, self.dates[idx], self.open[idx],
                           self.close[idx], self.volume[idx])

    def with_close(self, close) -> "AssetSeries":
        return AssetSeries(self.symbol, self.dates, self.open, close, self.volume)


@dataclass(frozen=True)
class PairSeries:
    x: AssetSeries
    y: AssetSeries

    def __post_init__(self):
        if len(self.x) < 2:
            raise InsufficientOverlap("pair needs at least 2 common dates")
        if not np.array_equal(self.x.dates, self.y.dates):
            raise ValueError("pair legs must share the same dates")

    @property
    def dates(self):
        return self.x.dates

    def __len__(self):
        return len(self.x)

    @property
    def symbols(self):
        return self.x.symbol, self.y.symbol


@dataclass(frozen=True)
class DateRange:
    """Closed calendar interval [start, end]."""

    start: dt.date
    end: dt.date

    def __post_init__(self):
        # accept ISO strings and datetime64 for convenience
        for name in ("start", "end"):
            v = getattr(self, name)
            if not isinstance(v, dt.date):
                object.__setattr__(self, name, dt.date.fromisoformat(str(np.datetime64(v, "D"))))
        if self.end < self.start:
            raise ValueError(f"range end {self.end} precedes start {self.start}")

    def mask(self, dates: np.ndarray) -> np.ndarray:
        return (dates >= np.datetime64(self.start, "D")) & (
            dates <= np.datetime64(self.end, "D"))

    def indices(self, dates: np.ndarray) -> np.ndarray:
        return np.flatnonzero(self.mask(dates))

    def __str__(self):
        return f"{self.start.isoformat()}..{self.end.isoformat()}"


@dataclass(frozen=True)
class RollingSplit:
    index: int
    train: DateRange
    validation: DateRange
    test: DateRange


def load_eod_csv(path, symbol: str | None = None) -> AssetSeries:
    """Read a ``date,open,close,volume`` CSV into an :class:`AssetSeries`.

    Rows may appear in any order; they are sorted by date. The symbol
    defaults to the file stem.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    symbol = symbol or path.stem
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != CSV_HEADER:
            raise MalformedRow(path, 1, f"expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise MalformedRow(path, lineno, f"expected 4 fields, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[0].strip())
                o, c, v = (float(cell) for cell in row[1:])
            except ValueError as exc:
                raise MalformedRow(path, lineno, str(exc)) from None
            if not (np.isfinite(o) and np.isfinite(c) and np.isfinite(v)):
                raise MalformedRow(path, lineno, "non-finite value")
            if o <= 0 or c <= 0:
                raise NonPositivePrice(f"{path}:{lineno}: price must be positive")
            if v < 0:
                raise MalformedRow(path, lineno, "negative volume")
            records.append((day, o, c, v))
    records.sort(key=lambda r: r[0])
    for a, b in zip(records, records[1:]):
        if a[0] == b[0]:
            raise DuplicateDate(f"{path}: {a[0].isoformat()} appears twice")
    cols = list(zip(*records)) if records else [(), (), (), ()]
    return AssetSeries(symbol, np.array(cols[0], dtype="datetime64[D]"),
                       cols[1], cols[2], cols[3])


def write_eod_csv(series: AssetSeries, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for d, o, c, v in series.rows:
            w.writerow([d.isoformat(), repr(float(o)), repr(float(c)), repr(float(v))])


def align_pair(x: AssetSeries, y: AssetSeries) -> PairSeries:
    """Restrict both series to their common dates."""
    if len(x) == 0 or len(y) == 0:
        raise InsufficientOverlap("empty series")
    common, ix, iy = np.intersect1d(x.dates, y.dates, assume_unique=True,
                                    return_indices=True)
    if len(common) < 2:
        raise InsufficientOverlap(
            f"{x.symbol}/{y.symbol} share {len(common)} dates; need at least 2")
    return PairSeries(x.take(ix), y.take(iy))


def simple_return(series: AssetSeries, t: int) -> float:
    if not 1 <= t < len(series):
        raise IndexOutOfRange(f"t={t} outside [1, {len(series) - 1}]")
    return series.close[t] / series.close[t - 1] - 1.0


def simple_returns(close: np.ndarray) -> np.ndarray:
    """Vectorised close-to-close returns, length ``len(close) - 1``."""
    close = np.asarray(close, dtype=float)
    return close[1:] / close[:-1] - 1.0


@dataclass(frozen=True)
class Features:
    """Standardised log features, one row per pair date."""

    values: np.ndarray  # (n_days, 6)
    mean: np.ndarray  # (6,)
    std: np.ndarray  # (6,)
    dates: np.ndarray


def raw_log_features(pair: PairSeries) -> np.ndarray:
    cols = []
    for leg in (pair.x, pair.y):
        cols += [np.log(leg.open), np.log(leg.close), np.log1p(leg.volume)]
    return np.column_stack(cols)


def log_normalize(pair: PairSeries, fit_range: DateRange) -> Features:
    """Log-transform prices (and ``log1p`` volumes), then z-score every
    channel with mean/std estimated on ``fit_range`` only."""
    raw = raw_log_features(pair)
    fit = fit_range.mask(pair.dates)
    if fit.sum() < 2:
        raise InsufficientOverlap(f"fit range {fit_range} covers {fit.sum()} dates")
    mean = raw[fit].mean(axis=0)
    std = raw[fit].std(axis=0)
    for k, name in enumerate(FEATURE_CHANNELS):
        if std[k] <= 1e-12 * max(1.0, abs(mean[k])):
            raise ZeroVariance(name)
    values = (raw - mean) / std
    return Features(values, mean, std, pair.dates)


def _month_start(d: dt.date, offset: int = 0) -> dt.date:
    m = d.year * 12 + (d.month - 1) + offset
    return dt.date(m // 12, m % 12 + 1, 1)


def _month_range(anchor: dt.date, first: int, n: int) -> DateRange:
    start = _month_start(anchor, first)
    end = _month_start(anchor, first + n) - dt.timedelta(days=1)
    return DateRange(start, end)


def make_rollings(pair_or_dates, window_months: int = 18, stride_months: int = 3,
                  split: tuple[int, int, int] = (12, 3, 3)) -> list[RollingSplit]:
    """Calendar-month rolling windows over the sample.

    Accepts a :class:`PairSeries` or a plain array of dates.
    """
    if sum(split) != window_months:
        raise ValueError(f"split {split} does not add up to {window_months} months")
    dates = pair_or_dates.dates if isinstance(pair_or_dates, PairSeries) else (
        np.asarray(pair_or_dates, dtype="datetime64[D]"))
    if len(dates) == 0:
        raise SampleTooShort("no dates")
    first, last = dates[0].item(), dates[-1].item()
    span = (last.year - first.year) * 12 + last.month - first.month + 1
    if span < window_months:
        raise SampleTooShort(f"sample spans {span} months; need {window_months}")
    count = (span - window_months) // stride_months + 1
    n_train, n_val, n_test = split
    out = []
    for k in range(count):
        m0 = k * stride_months
        out.append(RollingSplit(
            index=k,
            train=_month_range(first, m0, n_train),
            validation=_month_range(first, m0 + n_train, n_val),
            test=_month_range(first, m0 + n_train + n_val, n_test),
        ))
    return out
