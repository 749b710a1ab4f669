"""Closed-form diagnostics of how a fund's demand reacts to the mispricing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .config import FundParams
from .model import fund_demand


@dataclass(frozen=True)
class DerivativePoint:
    m: float
    dDdm_per_wealth: float
    regime: str  # "below_cap" or "above_cap"


def demand_derivative(m: float, beta: float, lambda_max: float, V: float = 1.0) -> DerivativePoint:
    """Rate of buying per unit wealth under an infinitesimal rise in mispricing.

    Evaluated in the self-financing state where the fund's position matches its
    target at ``m``, ignoring investor flows.  ``lambda_max=math.inf`` gives the
    uncapped curve.
    """
    if not 0 <= m < V:
        raise ValueError("need 0 <= m < V")
    if m >= lambda_max / beta:
        return DerivativePoint(m, lambda_max * (1.0 - lambda_max) / (V - m) ** 2, "above_cap")
    return DerivativePoint(m, beta * (V - beta * m * m) / (V - m) ** 2, "below_cap")


def self_financing_state(m: float, beta: float, lambda_max: float, V: float = 1.0,
                         wealth: float = 1.0) -> tuple[float, float]:
    """Holdings (shares, cash) of a fund sitting exactly on its target at ``m``."""
    p = V - m
    if m >= lambda_max / beta:
        frac = lambda_max
    else:
        frac = beta * m
    shares = frac * wealth / p
    return shares, wealth - shares * p


def demand_after_move(m_new: float, shares: float, cash: float, beta: float, lambda_max: float,
                      V: float = 1.0) -> float:
    """Demand after the mispricing moves to ``m_new`` with holdings marked to market."""
    p = V - m_new
    wealth = shares * p + cash
    return fund_demand(m_new, wealth, p, FundParams(beta, max(lambda_max, 1.0)), lambda_max)


def damping_factor(beta: float, N: float, C: float, D: float, V: float = 1.0) -> Optional[float]:
    """Approximate volatility damping from an unlevered fund below its cap."""
    if N <= 0:
        raise ValueError("N must be > 0")
    denom = 1.0 + beta / N * (C + D * V)
    if denom <= 0:
        return None
    return 1.0 / denom


def amplification_factor(lambda_max: float, V: float, N: float) -> Optional[float]:
    """Approximate volatility amplification from a fund pinned at its cap."""
    x = lambda_max * V / N
    if x >= 1:
        return None
    return 1.0 / (1.0 - x)


def buy_sell_boundary(beta: float, V: float = 1.0) -> float:
    """Mispricing below the cap beyond which the fund sells as prices fall."""
    return math.sqrt(V / beta)
