import csv
import json

import numpy as np
import pytest

from credit_pairs import config as C
from credit_pairs.cli import main
from credit_pairs.errors import ConfigError, MissingFile
from credit_pairs.marketdata import write_eod_csv
from credit_pairs.synthetic import business_days, random_walk_asset

TINY_AGENT = ["agent.d_a=2", "agent.d_h=4", "agent.hidden=4", "agent.batch=2",
              "agent.subseq_len=4", "agent.episodes_per_rolling=3", "agent.episode_days=10",
              "agent.warmup_episodes=1", "agent.eval_every=1", "agent.train_ratio=0.2",
              "env.window_days=3"]
SYNTH_2Y = ["data.source=synthetic", "synthetic.end=2016-12-30"]


@pytest.fixture
def universe(tmp_path):
    d = tmp_path / "data"
    assert main(["make-synthetic", "--out", str(d), "--seed", "1", "--end", "2016-12-30"]) == 0
    rng = np.random.default_rng(0)
    dates = business_days("2015-01-02", "2016-12-30")
    write_eod_csv(random_walk_asset("RND", dates, rng), d / "RND.csv")
    return d


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_defaults_validate(self):
        cfg = C.load_config(None, ["data.source=synthetic"])
        assert cfg["method"] == "credit"
        assert C.agent_config(cfg).reward.alpha == 0.5

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="agent.gama"):
            C.load_config(None, ["data.source=synthetic", "agent.gama=0.9"])

    def test_unknown_key_in_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("data:\n  source: synthetic\nrolling:\n  windows: 3\n")
        with pytest.raises(ConfigError, match="rolling.windows"):
            C.load_config(p)

    def test_override_types(self):
        cfg = C.load_config(None, ["data.source=synthetic", "alpha_grid=[0.1, 1]",
                                   "synthetic.start=2015-01-02"])
        assert cfg["alpha_grid"] == [0.1, 1]
        assert cfg["synthetic"]["start"] == "2015-01-02"

    def test_missing_symbol_file(self, tmp_path):
        (tmp_path / "A.csv").write_text("date,open,close,volume\n")
        with pytest.raises(MissingFile):
            C.load_config(None, [f"data.dir={tmp_path}", "data.pair=[A, B]"])

    @pytest.mark.parametrize("override", ["method=lstm", "rolling.split=[12, 3, 2]",
                                          "cpm.open_threshold=3.0", "alpha_grid=[-1]",
                                          "agent.gamma=2", "workers=0"])
    def test_invalid_values(self, override):
        with pytest.raises(ConfigError):
            C.load_config(None, ["data.source=synthetic", override])

    def test_hash_ignores_output_location(self):
        a = C.load_config(None, ["data.source=synthetic", "output_dir=x", "workers=2"])
        b = C.load_config(None, ["data.source=synthetic", "output_dir=y"])
        c = C.load_config(None, ["data.source=synthetic", "seed=1"])
        assert C.config_hash(a) == C.config_hash(b) != C.config_hash(c)

    def test_output_env(self, monkeypatch, tmp_path):
        cfg = C.load_config(None, ["data.source=synthetic"])
        monkeypatch.setenv(C.OUTPUT_ENV, str(tmp_path))
        assert C.output_root(cfg) == tmp_path


class TestSelectPairs:
    def test_three_assets(self, universe, tmp_path, capsys):
        out = tmp_path / "pairs.csv"
        assert main(["select-pairs", "--set", f"data.dir={universe}", "--out", str(out)]) == 0
        rows = read_csv(out)
        assert len(rows) == 3
        assert list(rows[0]) == ["symbol_x", "symbol_y", "beta", "statistic", "p_value", "lags"]
        assert (rows[0]["symbol_x"], rows[0]["symbol_y"]) == ("SYNX", "SYNY")
        ps = [float(r["p_value"]) for r in rows]
        assert ps == sorted(ps)

    def test_top(self, universe, tmp_path):
        out = tmp_path / "top.csv"
        assert main(["select-pairs", "--set", f"data.dir={universe}", "--top", "1",
                     "--out", str(out)]) == 0
        assert len(read_csv(out)) == 1

    def test_missing_symbol(self, universe, capsys):
        code = main(["select-pairs", "--set", f"data.dir={universe}",
                     "--set", "data.symbols=[SYNX, NOPE]"])
        assert code == 1
        assert "NOPE" in capsys.readouterr().err


class TestRun:
    def test_bah_long(self, tmp_path, capsys):
        out = tmp_path / "bah"
        assert main(["run", "--set", "method=bah_long", *["--set=" + s for s in SYNTH_2Y],
                     "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["method"] == "BAH-Long"
        assert len(report["rollings"]) == 3
        for r in report["rollings"]:
            assert r["metrics"]["TT"] == 1 and r["metrics"]["ABD"] == 0
            trace = read_csv(out / r["trace_path"])
            assert len(trace) == round(r["metrics"]["AHD"]) + 1
        assert (out / "summary.csv").exists() and (out / "config.json").exists()

    def test_cpm_and_default_location(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(C.OUTPUT_ENV, str(tmp_path / "root"))
        assert main(["run", "--set", "method=cpm", *["--set=" + s for s in SYNTH_2Y]]) == 0
        printed = capsys.readouterr().out.strip()
        assert printed.startswith(str(tmp_path / "root" / "cpm-"))
        report = json.loads((tmp_path / printed / "report.json").read_text())
        assert all("cpm" in r for r in report["rollings"])

    def test_credit_deterministic(self, tmp_path):
        args = ["run", *["--set=" + s for s in SYNTH_2Y + TINY_AGENT],
                "--set", "rolling.indices=[0]", "--set", "alpha_grid=[0.1, 1.0]"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "report.json").read_bytes()
        assert a == (tmp_path / "b" / "report.json").read_bytes()
        rolling = tmp_path / "a" / "rolling_00"
        assert (rolling / "params.json").exists()
        assert (rolling / "training_log_alpha0.1.csv").exists()
        assert json.loads(a)["rollings"][0]["alpha"] in (0.1, 1.0)

    def test_failed_rolling_recorded(self, tmp_path, monkeypatch, capsys):
        import credit_pairs.runner as runner
        real = runner.bah_policy
        calls = []

        def flaky(direction, horizon):
            calls.append(horizon)
            if len(calls) == 2:
                raise ValueError("injected failure")
            return real(direction, horizon)

        monkeypatch.setattr(runner, "bah_policy", flaky)
        code = main(["run", "--set", "method=bah_short", *["--set=" + s for s in SYNTH_2Y],
                     "--out", str(tmp_path / "r")])
        assert code == 1
        report = json.loads((tmp_path / "r" / "report.json").read_text())
        assert report["rollings"][1] == {"index": 1, "error": "ValueError: injected failure"}
        assert report["aggregate"]["TT"]["mean"] == 1.0
        assert "rolling 1 failed" in capsys.readouterr().err

    def test_workers(self, tmp_path):
        base = ["run", "--set", "method=bah_short", *["--set=" + s for s in SYNTH_2Y]]
        assert main(base + ["--out", str(tmp_path / "a")]) == 0
        assert main(base + ["--set", "workers=2", "--out", str(tmp_path / "b")]) == 0
        assert ((tmp_path / "a" / "report.json").read_bytes()
                == (tmp_path / "b" / "report.json").read_bytes())


class TestVerify:
    def test_pristine(self, capsys):
        assert main(["verify"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 5 and "FAIL" not in out

    def test_corrupt_gradient(self, capsys):
        assert main(["verify", "--corrupt-gradient"]) == 1
        lines = capsys.readouterr().out.splitlines()
        assert [l for l in lines if "FAIL" in l][0].startswith("gradient check")


class TestReport:
    def test_combines_reports(self, tmp_path):
        for method in ("bah_long", "bah_short"):
            assert main(["run", "--set", f"method={method}", *["--set=" + s for s in SYNTH_2Y],
                         "--out", str(tmp_path / method)]) == 0
        out = tmp_path / "table.csv"
        assert main(["report", str(tmp_path / "bah_long" / "report.json"),
                     str(tmp_path / "bah_short" / "report.json"), "--out", str(out)]) == 0
        rows = read_csv(out)
        assert [r["Model"] for r in rows] == ["BAH-Long", "BAH-Short"]
        assert rows[0]["TT"] == "1.00 ± 0.00"
