import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from levsim.analytics import (
    amplification_factor,
    buy_sell_boundary,
    damping_factor,
    demand_after_move,
    demand_derivative,
    self_financing_state,
)


def test_derivative_examples():
    assert demand_derivative(0.0, 10.0, 1.0).dDdm_per_wealth == pytest.approx(10.0)
    p = demand_derivative(0.5, 10.0, 1.0)
    assert p.dDdm_per_wealth == 0.0 and p.regime == "above_cap"
    assert demand_derivative(0.4, 10.0, 3.0).dDdm_per_wealth == pytest.approx(-16.6667, abs=1e-4)


def test_derivative_rejects_m_at_or_above_v():
    with pytest.raises(ValueError):
        demand_derivative(1.0, 10.0, 3.0)


def test_uncapped_curve_uses_linear_branch():
    d = demand_derivative(0.5, 10.0, math.inf)
    assert d.regime == "below_cap"
    assert d.dDdm_per_wealth == pytest.approx(10 * (1 - 10 * 0.25) / 0.25)


def test_damping_examples():
    assert damping_factor(0.0, 1000.0, 1.0, 1.0) == 1.0
    assert damping_factor(10.0, 1000.0, 1.0, 1.0) == pytest.approx(0.9804, abs=1e-4)
    assert damping_factor(10.0, 1000.0, 0.0, 0.0) == 1.0
    assert damping_factor(10.0, 1000.0, -200.0, 0.0) is None


def test_amplification_examples():
    assert amplification_factor(10.0, 1.0, 1000.0) == pytest.approx(1.0101, abs=1e-4)
    assert amplification_factor(0.0, 1.0, 1000.0) == 1.0
    assert amplification_factor(999.999, 1.0, 1000.0) > 1e5
    assert amplification_factor(1000.0, 1.0, 1000.0) is None


def _fd(m, beta, lam, h=1e-6):
    D, C = self_financing_state(m, beta, lam)
    up = demand_after_move(m + h, D, C, beta, lam)
    down = demand_after_move(m - h, D, C, beta, lam)
    return (up - down) / (2 * h)


def test_finite_difference_agreement():
    rng = np.random.default_rng(10)
    checked = 0
    while checked < 1000:
        beta, lam, m = rng.uniform(1, 50), rng.uniform(1, 20), rng.uniform(1e-3, 0.95)
        if abs(m - lam / beta) < 1e-3:
            continue
        exact = demand_derivative(m, beta, lam).dDdm_per_wealth
        assert _fd(m, beta, lam) == pytest.approx(exact, rel=1e-6)
        checked += 1


@given(st.floats(1, 50), st.floats(1.001, 20), st.floats(0, 0.99))
def test_levered_funds_sell_above_cap(beta, lam, m):
    if m > lam / beta:
        assert demand_derivative(m, beta, lam).dDdm_per_wealth < 0


@given(st.floats(1, 50), st.floats(0, 0.99))
def test_unlevered_funds_hold_above_cap(beta, m):
    if m > 1 / beta:
        assert demand_derivative(m, beta, 1.0).dDdm_per_wealth == 0.0


@given(st.floats(1.5, 100))
def test_buy_sell_boundary(beta):
    m0 = buy_sell_boundary(beta)
    assert m0 == pytest.approx(math.sqrt(1 / beta))
    assert demand_derivative(m0 * 0.999, beta, math.inf).dDdm_per_wealth > 0
    assert demand_derivative(m0 * 1.001, beta, math.inf).dDdm_per_wealth < 0
