"""Agent state and the per-period update rules.

Everything here is a pure function of its arguments.  The engine composes these
rules; the compiled kernel in :mod:`levsim._kernel` re-implements the same
arithmetic and is checked against this module in the test suite.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

from .config import FundParams, LeveragePolicy, ModelConfig


MARGIN_SLACK = 1e-12


class InsolventFund(ValueError):
    """Leverage is undefined because wealth is not positive."""


@dataclass(frozen=True)
class NoiseTraderState:
    xi: float

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError("noise trader cash must be > 0")


@dataclass(frozen=True)
class FundState:
    params: FundParams
    wealth: float
    shares: float = 0.0
    cash: float = 0.0
    r_perf: float = 0.0
    # None while active, otherwise the timestep at which the fund is reborn
    reentry_time: Optional[int] = None

    @property
    def active(self) -> bool:
        return self.reentry_time is None

    @classmethod
    def fresh(cls, params: FundParams, W0: float) -> "FundState":
        """A newly created fund: all wealth in cash, no track record."""
        return cls(params=params, wealth=W0, shares=0.0, cash=W0, r_perf=0.0)

    def replace(self, **changes) -> "FundState":
        return dataclasses.replace(self, **changes)


def noise_trader_step(xi_prev: float, chi: float, cfg: ModelConfig) -> float:
    """Advance the noise traders' log-AR(1) cash process by one period."""
    if not (math.isfinite(xi_prev) and math.isfinite(chi)):
        raise ValueError("xi_prev and chi must be finite")
    if xi_prev <= 0:
        raise ValueError("xi_prev must be > 0")
    log_xi = cfg.rho * math.log(xi_prev) + cfg.sigma * chi + (1.0 - cfg.rho) * math.log(cfg.V * cfg.N)
    return math.exp(log_xi)


def fund_demand(m: float, wealth: float, p: float, params: FundParams, cap: float) -> float:
    """Shares a value investor wants to hold at price ``p``.

    Linear in the mispricing ``m = V - p`` until the position reaches ``cap``
    times wealth; ties at ``m == cap / beta`` take the capped branch.
    """
    if not p > 0:
        raise ValueError("price must be > 0")
    if m <= 0 or wealth <= 0:
        return 0.0
    if m >= cap / params.beta:
        return cap * wealth / p
    return params.beta * m * wealth / p


def leverage(shares: float, p: float, wealth: float) -> float:
    if not wealth > 0:
        raise InsolventFund(f"leverage undefined for wealth={wealth}")
    return shares * p / wealth


def performance_update(r_perf_prev: float, r: float, a: float) -> float:
    return (1.0 - a) * r_perf_prev + a * r


def capital_flow(r_perf: float, fund_value: float, cfg: ModelConfig) -> float:
    """Investor deposits (positive) or redemptions (negative).

    Redemptions are floored at the fund's marked-to-market value.  A fund whose
    value is already negative receives no flow.
    """
    if fund_value <= 0:
        return 0.0
    return max(cfg.b * (r_perf - cfg.r_b) * fund_value, -fund_value)


def wealth_update(W_prev: float, shares_prev: float, p: float, p_prev: float, flow: float) -> float:
    return W_prev + (p - p_prev) * shares_prev + flow


def fund_return(shares_prev: float, p: float, p_prev: float, W_prev: float) -> float:
    """Rate of return on the fund's position over one period."""
    if W_prev <= 0:
        return 0.0
    return shares_prev * (p - p_prev) / W_prev


def lifecycle_step(fund: FundState, W_new: float, t: int, cfg: ModelConfig) -> FundState:
    """Apply default or rebirth at timestep ``t``.

    Active funds whose new wealth is strictly below the survival threshold (or
    not positive, when the threshold is zero) are liquidated and scheduled for reintroduction ``T_reintro`` steps later.
    Defaulted funds whose reentry time has come are replaced by a fresh fund
    with the original parameters; ``W_new`` is ignored for them.
    """
    if not fund.active:
        if fund.reentry_time <= t:
            return FundState.fresh(fund.params, cfg.W0)
        return fund
    if W_new < cfg.survival_threshold or W_new <= 0:
        return FundState(params=fund.params, wealth=0.0, shares=0.0, cash=0.0,
                         r_perf=0.0, reentry_time=t + cfg.T_reintro)
    return fund.replace(wealth=W_new)


def effective_cap(params: FundParams, policy: LeveragePolicy, sigma2_tau: float) -> float:
    if policy.kind == "fixed":
        return params.lambda_max
    if sigma2_tau < 0:
        raise ValueError("variance must be >= 0")
    return max(1.0, params.lambda_max / (1.0 + policy.kappa * sigma2_tau))


def margin_call_flag(shares_prev: float, p: float, W_new: float, cap: float) -> bool:
    """True when last period's holdings exceed ``cap`` times the new wealth.

    A relative slack of ``MARGIN_SLACK`` keeps a fund sitting exactly at its cap
    from being flagged by rounding in the mark-to-market step.
    """
    if shares_prev <= 0:
        return False
    if W_new <= 0:
        return True
    return shares_prev * p > cap * W_new * (1.0 + MARGIN_SLACK)


def position(m: float, wealth: float, p: float, params: FundParams, cap: float) -> tuple[float, float]:
    """Shares and cash after rebalancing to the target demand.

    On the capped branch cash is computed as ``wealth * (1 - cap)`` so an
    unlevered fund (cap 1) holds exactly zero cash rather than a rounding-sized
    loan.
    """
    shares = fund_demand(m, wealth, p, params, cap)
    if m > 0 and m >= cap / params.beta:
        return shares, wealth * (1.0 - cap)
    return shares, wealth - shares * p


def trailing_variance(values) -> float:
    """Sample variance (n - 1 denominator); 0 for fewer than two values."""
    n = len(values)
    if n < 2:
        return 0.0
    s = 0.0
    for x in values:
        s += x
    mean = s / n
    ss = 0.0
    for x in values:
        d = x - mean
        ss += d * d
    return ss / (n - 1)
