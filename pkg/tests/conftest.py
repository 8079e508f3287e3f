import numpy as np
import pytest

from credit_pairs.marketdata import AssetSeries, PairSeries
from credit_pairs.synthetic import business_days


def make_asset(symbol, close, start="2020-01-01", open_=None, volume=None):
    close = np.asarray(close, dtype=float)
    dates = business_days(start, "2030-12-31")[:len(close)]
    open_ = close if open_ is None else np.asarray(open_, dtype=float)
    volume = np.full(len(close), 1000.0) if volume is None else np.asarray(volume, float)
    return AssetSeries(symbol, dates, open_, close, volume)


def make_pair(close_x, close_y, **kw):
    return PairSeries(make_asset("X", close_x, **kw), make_asset("Y", close_y, **kw))


def random_pair(seed, n=60, vol=0.02):
    rng = np.random.default_rng(seed)
    cx = 20 * np.exp(np.cumsum(rng.normal(0, vol, n)))
    cy = 30 * np.exp(np.cumsum(rng.normal(0, vol, n)))
    vx = rng.lognormal(10, 0.3, n).round()
    vy = rng.lognormal(10, 0.3, n).round()
    return PairSeries(make_asset("X", cx, volume=vx), make_asset("Y", cy, volume=vy))


@pytest.fixture
def write_csv(tmp_path):
    def _write(name, lines):
        p = tmp_path / name
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return p
    return _write


VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
