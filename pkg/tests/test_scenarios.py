import filecmp

import numpy as np
import pytest

from levsim.config import ConfigError, ModelConfig
from levsim.scenarios import (
    REGISTRY,
    UnknownScenario,
    rerun_from_manifest,
    run_scenario,
    set_param,
    sign_test_p,
    sweep,
)

SHORT = ModelConfig(T=3000)


def test_registry_names():
    assert {"fig2_wealth", "fig3_distributions", "fig3c_gamma_sweep", "fig4_acf", "fig5_derivatives",
            "crash_anatomy", "fig7_evolution", "fig6_vol_regulation"} <= set(REGISTRY)


def test_fig5_table():
    res = run_scenario("fig5_derivatives")
    t = res.tables["derivatives"]
    m = np.array(t.column("m"), dtype=float)
    assert len(m) == 601 and m[0] == 0.0 and m[-1] == pytest.approx(0.6)
    lam1 = np.array(t.column("dDdm_lambda_1"), dtype=float)
    assert np.all(lam1[m > 0.1] == 0.0)
    lam3 = np.array(t.column("dDdm_lambda_3"), dtype=float)
    assert np.all(lam3[m > 0.3] < 0)
    again = run_scenario("fig5_derivatives").tables["derivatives"]
    assert again.to_csv() == t.to_csv()


def test_unknown_scenario():
    with pytest.raises(UnknownScenario) as exc:
        run_scenario("fig99")
    assert "fig5_derivatives" in str(exc.value)


def test_sweep_unlevered_has_no_margin_calls():
    table = sweep(SHORT.replace(T=20_000), "lambda_max", [1.0], [1, 2, 3])
    assert table.metric(1.0, "margin_call_steps") == [0, 0, 0]
    assert table.metric(1.0, "negative_cash_steps") == [0, 0, 0]


def test_sweep_empty_seeds():
    table = sweep(SHORT, "lambda_max", [1.0, 2.0], [])
    assert table.cells == []
    assert table.rows().rows == []


def test_sweep_permutation_invariance():
    a = sweep(SHORT, "lambda_max", [2.0, 8.0], [1, 2])
    b = sweep(SHORT, "lambda_max", [8.0, 2.0], [2, 1])
    for v in (2.0, 8.0):
        for name in ("volatility", "mean_price", "defaults"):
            assert sorted(a.metric(v, name)) == sorted(b.metric(v, name))
    rows_a = {r[0]: r for r in a.aggregate().rows}
    rows_b = {r[0]: r for r in b.aggregate().rows}
    for v in (2.0, 8.0):
        for x, y in zip(rows_a[v], rows_b[v]):
            assert x == pytest.approx(y, rel=1e-12) if isinstance(x, float) else x == y


def test_sweep_parallel_matches_serial():
    a = sweep(SHORT, "lambda_max", [1.0, 10.0], [1, 2], jobs=1)
    b = sweep(SHORT, "lambda_max", [1.0, 10.0], [1, 2], jobs=2)
    assert a.rows().to_csv() == b.rows().to_csv()


def test_sweep_rejects_invalid_value_before_running():
    with pytest.raises(ConfigError, match="lambda_max"):
        sweep(SHORT, "lambda_max", [2.0, 0.5], [1])


def test_set_param():
    cfg = set_param(SHORT, "funds[9].lambda_max", 6)
    assert cfg.funds[9].lambda_max == 6 and cfg.funds[0].lambda_max == 20
    assert set_param(SHORT, "policy.kappa", 50).policy.kappa == 50
    with pytest.raises(KeyError):
        set_param(SHORT, "nonsense", 1)


def test_noise_only_kurtosis():
    res = run_scenario("fig3_distributions", seeds=[1, 2, 3, 4, 5], overrides={"T": 20_000})
    fits = res.tables["fits"]
    for case, k in zip(fits.column("case"), fits.column("excess_kurtosis")):
        if case == "noise_only":
            assert k <= 0.5


def test_scenario_rerun_byte_identical(tmp_path):
    run_scenario("fig3c_gamma_sweep", seeds=[1, 2], out_dir=tmp_path / "a", overrides={"T": 2000})
    man = tmp_path / "a" / "fig3c_gamma_sweep" / "manifest.json"
    rerun_from_manifest(man, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a" / "fig3c_gamma_sweep", tmp_path / "b" / "fig3c_gamma_sweep")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for sub in ("tables", "runs"):
        c = filecmp.dircmp(f"{cmp.left}/{sub}", f"{cmp.right}/{sub}")
        files = c.common_files
        assert files
        _, mismatch, errors = filecmp.cmpfiles(c.left, c.right, files, shallow=False)
        assert not mismatch and not errors


def test_sign_test():
    assert sign_test_p([1.0] * 10) == pytest.approx(0.5**10)
    assert sign_test_p([-1.0] * 10) == 1.0
