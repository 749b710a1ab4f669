import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levsim.cli import main, parse_seeds
from levsim.config import ConfigError, FundParams, LeveragePolicy, ModelConfig
from levsim.io import (
    apply_overrides,
    emit_run,
    load_manifest,
    parse_config,
    read_events,
    read_timeseries,
    timeseries_header,
)
from levsim.engine import run


def test_empty_config_gives_defaults(tmp_path):
    f = tmp_path / "c.json"
    f.write_text("{}")
    cfg = parse_config(f)
    assert (cfg.V, cfg.N, cfg.sigma, cfg.rho) == (1.0, 1000.0, 0.035, 0.99)
    assert (cfg.a, cfg.b, cfg.r_b, cfg.W0, cfg.T_reintro) == (0.1, 0.15, 0.005, 2.0, 100)
    assert cfg == ModelConfig()


def test_cap_below_one_rejected():
    with pytest.raises(ConfigError, match="lambda_max"):
        parse_config(None, ["funds[0].lambda_max=0.5"])


def test_override_beats_file(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"sigma": 0.02}))
    assert parse_config(f).sigma == 0.02
    assert parse_config(f, ["sigma=0.035"]).sigma == 0.035
    assert parse_config(f, ["sigma=0.01", "sigma=0.03"]).sigma == 0.03


def test_unknown_key_rejected(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"sigmaa": 0.02}))
    with pytest.raises(ConfigError, match="sigmaa"):
        parse_config(f)


def test_malformed_json(tmp_path):
    f = tmp_path / "c.json"
    f.write_text("{")
    with pytest.raises(ConfigError):
        parse_config(f)


def test_lambda_alias_and_wildcard():
    cfg = parse_config(None, ["lambda_max=7"])
    assert all(p.lambda_max == 7 for p in cfg.funds)
    d = apply_overrides(ModelConfig().to_dict(), ["funds[*].beta=3", "funds[2].beta=9"])
    assert [f["beta"] for f in d["funds"]][:3] == [3, 3, 9]
    with pytest.raises(ConfigError):
        apply_overrides(ModelConfig().to_dict(), ["funds[99].beta=3"])


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.1, 10), st.floats(10, 1e4), st.floats(0.001, 0.2), st.floats(0.5, 1.0),
    st.lists(st.tuples(st.floats(0.5, 60), st.floats(1, 30)), max_size=4),
    st.sampled_from(["fixed", "volatility"]), st.integers(0, 2**31), st.booleans(),
)
def test_config_round_trip(V, N, sigma, rho, funds, kind, seed, flows):
    cfg = ModelConfig(V=V, N=N, sigma=sigma, rho=rho, funds=tuple(FundParams(b, lam) for b, lam in funds),
                      policy=LeveragePolicy(kind), seed=seed, flows_in_clearing=flows)
    assert ModelConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_zero_fund_columns(tmp_path):
    art = run(ModelConfig(funds=(), T=50))
    emit_run(art, tmp_path)
    header = (tmp_path / "timeseries.csv").read_text().splitlines()[0]
    assert header == "t,price,log_return,xi,m,agg_leverage"
    assert timeseries_header(2)[6:9] == ["wealth_0", "shares_0", "cash_0"]


def test_emit_and_rerun_byte_identical(tmp_path):
    cfg = ModelConfig(T=2000, seed=3, funds=ModelConfig().with_lambda_max(10.0).funds)
    emit_run(run(cfg), tmp_path / "a")
    cfg2, _ = load_manifest(tmp_path / "a" / "manifest.json")
    assert cfg2 == cfg
    emit_run(run(cfg2), tmp_path / "b")
    for name in ("timeseries.csv", "events.csv", "summary.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_is_rectangular_and_exact(tmp_path):
    art = run(ModelConfig(T=500, seed=2))
    emit_run(art, tmp_path)
    lines = (tmp_path / "timeseries.csv").read_text().splitlines()
    assert len({len(line.split(",")) for line in lines}) == 1
    ts = read_timeseries(tmp_path / "timeseries.csv")
    assert np.array_equal(ts["price"], art.records.price)
    assert np.array_equal(ts["wealth_3"], art.records.wealth[:, 3])


def test_events_file_matches_flags(tmp_path):
    art = run(ModelConfig(T=20_000, seed=1).with_lambda_max(10.0))
    emit_run(art, tmp_path)
    rows = read_events(tmp_path / "events.csv")
    defaults = [(t, h) for t, h, k in rows if k == "default"]
    assert defaults
    t, h = defaults[0]
    assert art.records.default[t - 1, h]
    assert f"{t},{h},default" in (tmp_path / "events.csv").read_text().splitlines()


def test_summary_nulls_not_sentinels(tmp_path):
    emit_run(run(ModelConfig(T=50)), tmp_path)
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["tail_negative"] is None


def test_unwritable_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_run(run(ModelConfig(T=10)), blocker / "sub")


def test_parse_seeds():
    assert parse_seeds("3") == [1, 2, 3]
    assert parse_seeds("4,9") == [4, 9]
    assert parse_seeds("0") == []


# ----------------------------------------------------------------- CLI

def test_cli_run_and_analyze(tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["run", "--seed", "2", "--set", "T=3000", "--set", "lambda_max=10", "--out", str(out)]) == 0
    before = (out / "summary.json").read_bytes()
    assert main(["analyze", "--in", str(out)]) == 0
    assert (out / "summary.json").read_bytes() == before


def test_cli_compact(tmp_path):
    out = tmp_path / "r"
    assert main(["run", "--set", "T=200", "--compact", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "summary.json"]


def test_cli_chi_round_trip(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    chi = tmp_path / "chi.txt"
    assert main(["run", "--seed", "5", "--set", "T=300", "--out", str(a), "--chi-out", str(chi)]) == 0
    assert main(["run", "--set", "T=300", "--out", str(b), "--chi-in", str(chi)]) == 0
    assert (a / "timeseries.csv").read_bytes() == (b / "timeseries.csv").read_bytes()


def test_cli_sweep(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", "--param", "lambda_max", "--values", "1,5", "--seeds", "2",
                 "--set", "T=500", "--out", str(out)]) == 0
    assert any(out.iterdir())


def test_cli_list(capsys):
    assert main(["list-scenarios"]) == 0
    assert "fig5_derivatives" in capsys.readouterr().out


@pytest.mark.parametrize("argv, category", [
    (["run", "--set", "funds[0].lambda_max=0.5", "--out", "x"], "config"),
    (["run", "--set", "bogus=1", "--out", "x"], "config"),
    (["scenario", "nope"], "scenario"),
    (["sweep", "--param", "sigma", "--values", "0.1", "--seeds", "x", "--out", "y"], "usage"),
    (["analyze", "--in", "/nonexistent/dir"], "io"),
])
def test_cli_errors(argv, category, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"error: {category}: ")
