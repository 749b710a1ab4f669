import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levsim.stats import (
    ReturnSeries,
    RunSummary,
    acf_abs_returns,
    batch_means_se,
    excess_kurtosis,
    hill_estimator,
    hill_tail_exponent,
    log_returns,
    summary,
    white_noise_band,
)

from oracles import pareto_sample


def test_log_returns_examples():
    s = log_returns([1.0, 1.0, 1.0])
    assert np.array_equal(s.values, [0.0, 0.0])
    assert log_returns([1.0, math.e]).values[0] == pytest.approx(1.0, rel=1e-15)
    assert log_returns([0.9, 1.1], V=1.0).active_mask.tolist() == [True]
    assert log_returns([1.1, 0.9], V=1.0).active_mask.tolist() == [False]


def test_log_returns_rejects_bad_prices():
    with pytest.raises(ValueError):
        log_returns([1.0, 0.0])
    with pytest.raises(ValueError):
        log_returns([1.0])


@given(st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=200))
def test_log_returns_round_trip(prices):
    r = log_returns(prices).values
    rebuilt = math.log(prices[0]) + np.concatenate([[0.0], np.cumsum(r)])
    np.testing.assert_allclose(rebuilt, np.log(prices), atol=1e-12, rtol=0)


def test_hill_hand_example():
    assert hill_estimator([8, 4, 2, 1], 2) == pytest.approx(2 / (3 * math.log(2)), rel=1e-14)
    assert hill_estimator([8, 4, 2, 1], 2) == pytest.approx(0.9618, abs=1e-4)


def test_hill_degenerate_is_absent():
    assert hill_estimator([3.0] * 50, 5) is None
    assert hill_tail_exponent(np.full(1000, 2.0)) is None
    # too few samples for k >= 10
    assert hill_tail_exponent(np.arange(1.0, 100.0)) is None


def test_hill_on_pareto():
    fit = hill_tail_exponent(pareto_sample(3.0, 1_000_000, seed=1), tail_fraction=0.025)
    assert fit.gamma == pytest.approx(3.0, abs=0.1)
    assert fit.gamma == pytest.approx(3.0, rel=0.05)
    assert fit.k == 25_000
    assert fit.rank_size_gamma == pytest.approx(3.0, rel=0.1)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 10_000))
def test_hill_scale_invariant(c, seed):
    x = pareto_sample(2.5, 2000, seed)
    a = hill_tail_exponent(x)
    b = hill_tail_exponent(c * x)
    assert b.gamma == pytest.approx(a.gamma, rel=1e-9)


def test_acf_white_noise():
    r = np.random.default_rng(5).standard_normal(100_000)
    acf = acf_abs_returns(ReturnSeries(r, np.ones_like(r, dtype=bool)), max_lag=10)
    assert acf[0] == 1.0
    assert all(abs(a) < 0.02 for a in acf[1:])
    assert white_noise_band(100_000) == pytest.approx(0.006324555, rel=1e-6)


def test_acf_constant_magnitude_is_absent():
    r = np.tile([1.0, -1.0], 500)
    acf = acf_abs_returns(ReturnSeries(r, np.ones(1000, dtype=bool)), max_lag=5)
    assert all(a is None for a in acf)


def test_acf_masked_all_true_matches_dense():
    rng = np.random.default_rng(8)
    r = rng.standard_normal(5000) * np.exp(np.cumsum(rng.normal(0, 0.05, 5000)))
    x = np.abs(r)
    mu, var = x.mean(), x.var()
    dense = [float(np.mean((x[:-k] - mu) * (x[k:] - mu)) / var) for k in range(1, 11)]
    acf = acf_abs_returns(ReturnSeries(r, np.ones(5000, dtype=bool)), max_lag=10)
    np.testing.assert_allclose(acf[1:], dense, rtol=1e-12)


def test_acf_sparse_lags_absent():
    r = np.random.default_rng(1).standard_normal(1000)
    mask = np.zeros(1000, dtype=bool)
    mask[::3] = True
    acf = acf_abs_returns(ReturnSeries(r, mask), max_lag=3)
    assert acf[1] is None and acf[2] is None and acf[3] is not None


def test_excess_kurtosis_normal():
    x = np.random.default_rng(2).standard_normal(1_000_000)
    assert excess_kurtosis(x) == pytest.approx(0.0, abs=0.05)
    assert excess_kurtosis(np.ones(10)) is None


def test_summary_constant_prices():
    s = summary(np.ones(200), 1.0)
    assert s.volatility == 0
    assert s.excess_kurtosis is None
    assert s.default_rate == 0


def test_summary_alternating_returns():
    x = 0.01
    prices = np.exp(np.cumsum(np.tile([x, -x], 50)))
    s = summary(np.concatenate([[1.0], prices]), 1.0)
    assert s.volatility == pytest.approx(x, rel=1e-12)


def test_summary_empty():
    s = summary([1.0], 1.0)
    assert s.volatility is None and s.n_returns == 0


def test_summary_round_trip():
    rng = np.random.default_rng(4)
    prices = np.exp(np.cumsum(rng.normal(0, 0.02, 3000)) * 0.1) * 0.9
    s = summary(prices, 1.0, n_defaults=3, margin_steps=np.zeros(2999, dtype=bool))
    d = s.to_dict()
    assert RunSummary.from_dict(d).to_dict() == d


def test_batch_means_se_iid():
    x = np.random.default_rng(6).standard_normal(100_000)
    assert batch_means_se(x) == pytest.approx(1 / math.sqrt(100_000), rel=0.2)
