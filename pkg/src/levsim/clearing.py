"""Market clearing: find the price at which total demand equals supply.

Fund wealth depends on the candidate price (mark-to-market gains plus investor
flows), so excess demand is a nonlinear, possibly non-monotone function of
price.  We bracket the root and bisect.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .config import ModelConfig
from .model import FundState, capital_flow, fund_demand, fund_return, performance_update

TOL = 1e-8
MAX_ITER = 200


class ClearingError(RuntimeError):
    """No valid bracket could be found; carries the offending problem."""

    def __init__(self, message: str, problem: "ClearingProblem", diagnostics: dict):
        super().__init__(message)
        self.problem = problem
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ClearingProblem:
    xi: float
    # (fund state at t-1, effective cap for period t)
    funds: Sequence[tuple[FundState, float]]
    p_prev: float
    cfg: ModelConfig

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError("xi must be > 0")
        if not self.p_prev > 0:
            raise ValueError("p_prev must be > 0")


@dataclass(frozen=True)
class ClearingResult:
    price: float
    residual: float
    iterations: int
    bracket: float


class Settlement(NamedTuple):
    wealth: float
    ret: float
    r_perf: float
    flow: float


def settle(fund: FundState, p: float, p_prev: float, cfg: ModelConfig) -> Settlement:
    """Wealth, return, performance and flow of an active fund at price ``p``.

    The same function is used while solving for the price and when settling
    accounts afterwards, so both agree to the last bit.
    """
    ret = fund_return(fund.shares, p, p_prev, fund.wealth)
    r_perf = performance_update(fund.r_perf, ret, cfg.a)
    if cfg.flows_in_clearing:
        fund_value = fund.shares * p + fund.cash
        flow = capital_flow(r_perf, fund_value, cfg)
    else:
        # flows fixed at the previous price, where the period return is zero
        fund_value = fund.shares * p_prev + fund.cash
        flow = capital_flow(performance_update(fund.r_perf, 0.0, cfg.a), fund_value, cfg)
    wealth = fund.wealth + (p - p_prev) * fund.shares + flow
    return Settlement(wealth, ret, r_perf, flow)


def fund_demand_at_price(fund: FundState, cap: float, p: float, p_prev: float, cfg: ModelConfig) -> float:
    """Demand of one fund at a candidate price; zero if defaulted or defaulting."""
    if not fund.active:
        return 0.0
    wealth = settle(fund, p, p_prev, cfg).wealth
    # a fund that would fall below the survival threshold liquidates everything
    if wealth < cfg.survival_threshold or wealth <= 0:
        return 0.0
    return fund_demand(cfg.V - p, wealth, p, fund.params, cap)


def excess_demand(p: float, prob: ClearingProblem) -> float:
    if not p > 0:
        raise ValueError("price must be > 0")
    total = prob.xi / p
    for fund, cap in prob.funds:
        total += fund_demand_at_price(fund, cap, p, prob.p_prev, prob.cfg)
    return total - prob.cfg.N


def default_bracket(prob: ClearingProblem) -> tuple[float, float]:
    V = prob.cfg.V
    return 1e-4 * V, max(10.0 * V, 2.0 * prob.xi / prob.cfg.N)


def clear_price(prob: ClearingProblem, tol: float = TOL, p_min: float | None = None,
                p_max: float | None = None, max_iter: int = MAX_ITER) -> ClearingResult:
    """Bisect excess demand on ``[p_min, p_max]`` until ``|excess| <= tol``.

    If the bracket shrinks to adjacent floating point numbers before reaching the
    tolerance, the endpoint with the smaller residual is returned.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    lo_default, hi_default = default_bracket(prob)
    lo = lo_default if p_min is None else p_min
    hi = hi_default if p_max is None else p_max
    if not 0 < lo < hi:
        raise ValueError("need 0 < p_min < p_max")

    f_lo, f_hi = excess_demand(lo, prob), excess_demand(hi, prob)
    for _ in range(8):
        if f_lo > 0 and f_hi < 0:
            break
        if f_lo <= 0:
            lo /= 10.0
            f_lo = excess_demand(lo, prob)
        if f_hi >= 0:
            hi *= 10.0
            f_hi = excess_demand(hi, prob)
    else:
        if not (f_lo > 0 and f_hi < 0):
            raise ClearingError("could not bracket the clearing price", prob,
                                {"p_min": lo, "p_max": hi, "ed_min": f_lo, "ed_max": f_hi})

    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = excess_demand(mid, prob)
        if abs(f_mid) <= tol:
            return ClearingResult(mid, f_mid, it, hi - lo)
        if f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    else:
        it = max_iter
    if abs(f_lo) <= abs(f_hi):
        return ClearingResult(lo, f_lo, it, hi - lo)
    return ClearingResult(hi, f_hi, it, hi - lo)


def count_sign_changes(prob: ClearingProblem, n: int = 1024) -> int:
    """Number of sign changes of excess demand on a coarse geometric grid.

    More than one means several clearing prices exist; bisection picks one.
    """
    lo, hi = default_bracket(prob)
    ratio = (hi / lo) ** (1.0 / (n - 1))
    prev = excess_demand(lo, prob)
    changes = 0
    for i in range(1, n):
        cur = excess_demand(lo * ratio**i, prob)
        if (prev > 0) != (cur > 0):
            changes += 1
        prev = cur
    return changes
