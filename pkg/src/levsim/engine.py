"""Simulation loop.

:func:`step` advances the market by one period using the pure rules in
:mod:`levsim.model` and :mod:`levsim.clearing`.  :func:`run` drives a whole
horizon, by default through the compiled kernel (same arithmetic, about a
thousand times faster); ``backend="python"`` uses :func:`step` directly.

Within a period ``t`` the order is:

1. defaulted funds whose reentry time has come are reborn;
2. the noise traders draw their cash from one standard-normal draw;
3. leverage caps are set from returns observed up to ``t - 1``;
4. the price is cleared, with fund wealth marked at the candidate price;
5. accounts are settled (return, performance, investor flow, wealth);
6. margin calls are flagged on pre-trade holdings and defaults applied;
7. surviving funds rebalance to their demand at the cleared price.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .clearing import MAX_ITER, TOL, ClearingError, ClearingProblem, clear_price, settle
from .config import ModelConfig
from .model import (FundState, effective_cap, lifecycle_step, margin_call_flag,
                    noise_trader_step, position, trailing_variance)
from .rng import chi_series
from .stats import RunSummary, summary

EVENT_KINDS = ("rebirth", "margin_call", "default")


class SimulationError(RuntimeError):
    """Clearing failed; ``state`` and ``chi`` reproduce the failing step."""

    def __init__(self, message: str, t: int, state: Optional["EngineState"] = None,
                 chi: Optional[float] = None, diagnostics: Optional[dict] = None):
        super().__init__(f"t={t}: {message}")
        self.t = t
        self.state = state
        self.chi = chi
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class EngineState:
    t: int
    xi: float
    price: float
    funds: tuple[FundState, ...]
    # trailing log returns (or prices), oldest first, at most tau entries
    window: tuple[float, ...] = ()


def initial_state(cfg: ModelConfig) -> EngineState:
    window = (cfg.V,) if cfg.policy.vol_measure == "price" else ()
    funds = tuple(FundState.fresh(f, cfg.W0) for f in cfg.funds)
    return EngineState(t=0, xi=cfg.V * cfg.N, price=cfg.V, funds=funds, window=window)


@dataclass(frozen=True)
class FundRecord:
    wealth: float
    shares: float
    cash: float
    leverage: float
    margin_call: bool
    default: bool
    rebirth: bool
    flow: float
    ret: float
    r_perf: float
    cap: float


@dataclass(frozen=True)
class StepRecord:
    t: int
    price: float
    log_return: float
    xi: float
    m: float
    aggregate_leverage: float
    funds: tuple[FundRecord, ...]
    residual: float = 0.0
    iterations: int = 0

    @property
    def effective_caps(self) -> tuple[float, ...]:
        return tuple(f.cap for f in self.funds)


@dataclass
class Records:
    """Columnar per-step output; ``records[i]`` is the :class:`StepRecord` of step ``i + 1``."""

    price: np.ndarray
    xi: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    wealth: np.ndarray
    shares: np.ndarray
    cash: np.ndarray
    flow: np.ndarray
    ret: np.ndarray
    r_perf: np.ndarray
    cap: np.ndarray
    margin_call: np.ndarray
    default: np.ndarray
    rebirth: np.ndarray
    p0: float = 1.0
    V: float = 1.0

    def __len__(self):
        return len(self.price)

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, len(self) + 1)

    @property
    def n_funds(self) -> int:
        return self.wealth.shape[1]

    @property
    def prices_with_initial(self) -> np.ndarray:
        return np.concatenate([[self.p0], self.price])

    @property
    def log_return(self) -> np.ndarray:
        return np.diff(np.log(self.prices_with_initial))

    @property
    def m(self) -> np.ndarray:
        return self.V - self.price

    @property
    def leverage(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            lev = self.shares * self.price[:, None] / self.wealth
        return np.where(self.wealth > 0, lev, 0.0)

    @property
    def aggregate_leverage(self) -> np.ndarray:
        value = (self.shares * self.price[:, None]).sum(axis=1)
        total_w = np.where(self.wealth > 0, self.wealth, 0.0).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(total_w > 0, value / total_w, 0.0)

    def __getitem__(self, i: int) -> StepRecord:
        if i < 0:
            i += len(self)
        lev = self.leverage[i]
        funds = tuple(
            FundRecord(float(self.wealth[i, h]), float(self.shares[i, h]), float(self.cash[i, h]),
                       float(lev[h]), bool(self.margin_call[i, h]), bool(self.default[i, h]),
                       bool(self.rebirth[i, h]), float(self.flow[i, h]), float(self.ret[i, h]),
                       float(self.r_perf[i, h]), float(self.cap[i, h]))
            for h in range(self.n_funds)
        )
        p_prev = self.p0 if i == 0 else self.price[i - 1]
        return StepRecord(t=i + 1, price=float(self.price[i]),
                          log_return=math.log(self.price[i]) - math.log(p_prev),
                          xi=float(self.xi[i]), m=float(self.V - self.price[i]),
                          aggregate_leverage=float(self.aggregate_leverage[i]), funds=funds,
                          residual=float(self.residual[i]), iterations=int(self.iterations[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_steps(cls, steps: Sequence[StepRecord], n_funds: int, p0: float, V: float) -> "Records":
        T = len(steps)

        def col(name, dtype=np.float64):
            return np.array([[getattr(f, name) for f in s.funds] for s in steps],
                            dtype=dtype).reshape(T, n_funds)

        return cls(
            price=np.array([s.price for s in steps], dtype=np.float64),
            xi=np.array([s.xi for s in steps], dtype=np.float64),
            residual=np.array([s.residual for s in steps], dtype=np.float64),
            iterations=np.array([s.iterations for s in steps], dtype=np.int64),
            wealth=col("wealth"), shares=col("shares"), cash=col("cash"), flow=col("flow"),
            ret=col("ret"), r_perf=col("r_perf"), cap=col("cap"),
            margin_call=col("margin_call", bool), default=col("default", bool),
            rebirth=col("rebirth", bool), p0=p0, V=V,
        )


@dataclass(frozen=True)
class Event:
    t: int
    fund: int
    kind: str


def events_from_records(records: Records) -> list[Event]:
    """Events ordered by timestep, fund, then rebirth / margin call / default."""
    out = []
    flags = {"rebirth": records.rebirth, "margin_call": records.margin_call,
             "default": records.default}
    for kind in EVENT_KINDS:
        ts, hs = np.nonzero(flags[kind])
        out.extend(Event(int(t) + 1, int(h), kind) for t, h in zip(ts, hs))
    order = {k: i for i, k in enumerate(EVENT_KINDS)}
    out.sort(key=lambda e: (e.t, e.fund, order[e.kind]))
    return out


@dataclass
class RunArtifact:
    config: ModelConfig
    records: Records
    events: list[Event]
    summary: RunSummary
    provenance: dict = field(default_factory=dict)


def solver_settings() -> dict:
    return {"method": "bisection", "tol": TOL, "max_iter": MAX_ITER,
            "bracket": "[1e-4*V, max(10*V, 2*xi/N)]"}


def provenance(cfg: ModelConfig, backend: str, chi_source: str = "seed") -> dict:
    return {
        "seed": cfg.seed,
        "rng": "philox4x32-10 uniforms (k+0.5)/2^53, inverse normal CDF",
        "chi_source": chi_source,
        "solver": solver_settings(),
        "backend": backend,
        "version": __version__,
    }


def _caps(state: EngineState, cfg: ModelConfig) -> list[float]:
    var = trailing_variance(state.window) if cfg.policy.kind == "volatility" else 0.0
    return [effective_cap(f.params, cfg.policy, var) for f in state.funds]


def step(state: EngineState, chi: float, cfg: ModelConfig) -> tuple[EngineState, StepRecord]:
    """Advance one period with standard-normal draw ``chi``."""
    t = state.t + 1
    funds = list(state.funds)
    reborn = [False] * len(funds)
    for h, f in enumerate(funds):
        if not f.active and f.reentry_time <= t:
            funds[h] = lifecycle_step(f, 0.0, t, cfg)
            reborn[h] = True

    xi = noise_trader_step(state.xi, chi, cfg)
    caps = _caps(state, cfg)
    prob = ClearingProblem(xi=xi, funds=tuple(zip(funds, caps)), p_prev=state.price, cfg=cfg)
    try:
        result = clear_price(prob)
    except ClearingError as exc:
        raise SimulationError(str(exc), t, state, chi, exc.diagnostics) from exc
    p, p_prev = result.price, state.price

    new_funds = []
    fund_records = []
    m = cfg.V - p
    for h, f in enumerate(funds):
        if not f.active:
            new_funds.append(f)
            fund_records.append(FundRecord(0.0, 0.0, 0.0, 0.0, False, False, False,
                                           0.0, 0.0, 0.0, caps[h]))
            continue
        s = settle(f, p, p_prev, cfg)
        # only a fund with an outstanding loan can be margin-called; a default
        # of a borrowing fund is a call it could not meet
        called = f.cash < 0 and margin_call_flag(f.shares, p, s.wealth, caps[h])
        g = lifecycle_step(f, s.wealth, t, cfg)
        if g.active:
            shares, cash = position(m, s.wealth, p, f.params, caps[h])
            g = g.replace(shares=shares, cash=cash, r_perf=s.r_perf)
            lev = g.shares * p / g.wealth
        else:
            lev = 0.0
        new_funds.append(g)
        fund_records.append(FundRecord(g.wealth, g.shares, g.cash, lev, called, not g.active,
                                       reborn[h], s.flow, s.ret, s.r_perf, caps[h]))

    obs = p if cfg.policy.vol_measure == "price" else math.log(p) - math.log(p_prev)
    window = deque(state.window, maxlen=cfg.policy.tau)
    window.append(obs)

    value = sum(r.shares for r in fund_records) * p
    total_w = sum(r.wealth for r in fund_records if r.wealth > 0)
    record = StepRecord(
        t=t, price=p, log_return=math.log(p) - math.log(p_prev), xi=xi, m=m,
        aggregate_leverage=value / total_w if total_w > 0 else 0.0,
        funds=tuple(fund_records), residual=result.residual, iterations=result.iterations,
    )
    new_state = EngineState(t=t, xi=xi, price=p, funds=tuple(new_funds), window=tuple(window))
    return new_state, record


def _run_python(cfg: ModelConfig, chi: np.ndarray) -> Records:
    state = initial_state(cfg)
    steps = []
    for i in range(cfg.T):
        state, rec = step(state, float(chi[i]), cfg)
        steps.append(rec)
    return Records.from_steps(steps, len(cfg.funds), cfg.V, cfg.V)


def _run_compiled(cfg: ModelConfig, chi: np.ndarray) -> Records:
    from ._kernel import OK, run_kernel

    beta = np.array([f.beta for f in cfg.funds], dtype=np.float64)
    lam = np.array([f.lambda_max for f in cfg.funds], dtype=np.float64)
    pol = cfg.policy
    out = run_kernel(
        np.ascontiguousarray(chi[: cfg.T], dtype=np.float64), float(cfg.V), float(cfg.N),
        float(cfg.sigma), float(cfg.rho), float(cfg.a), float(cfg.b), float(cfg.r_b),
        float(cfg.W0), float(cfg.survival_threshold), int(cfg.T_reintro), beta, lam,
        pol.kind == "volatility", float(pol.kappa), int(pol.tau), pol.vol_measure == "price",
        bool(cfg.flows_in_clearing), TOL, MAX_ITER,
    )
    status, n = out[0], out[1]
    if status != OK:
        # replay in pure Python up to the failing step for a full state dump
        state = initial_state(cfg)
        for i in range(n):
            state, _ = step(state, float(chi[i]), cfg)
        step(state, float(chi[n]), cfg)
        raise SimulationError("compiled clearing failed to bracket", n + 1)
    (price, xi, residual, iters, wealth, shares, cash, flow, ret, rperf, cap,
     margin, default, rebirth) = out[2:]
    return Records(price=price, xi=xi, residual=residual, iterations=iters, wealth=wealth,
                   shares=shares, cash=cash, flow=flow, ret=ret, r_perf=rperf, cap=cap,
                   margin_call=margin, default=default, rebirth=rebirth, p0=cfg.V, V=cfg.V)


def summarize_records(records: Records, V: float) -> RunSummary:
    return summary(records.prices_with_initial, V, n_defaults=int(records.default.sum()),
                   margin_steps=records.margin_call.any(axis=1) if records.n_funds else
                   np.zeros(len(records), dtype=bool))


def run(cfg: ModelConfig, chi: Optional[np.ndarray] = None, backend: str = "compiled") -> RunArtifact:
    """Simulate ``cfg.T`` periods from the documented initial conditions.

    ``chi`` overrides the seeded draw sequence (e.g. one loaded from a file);
    it must hold at least ``cfg.T`` values.
    """
    if chi is None:
        chi = chi_series(cfg.seed, cfg.T)
        source = "seed"
    else:
        chi = np.asarray(chi, dtype=np.float64)
        if len(chi) < cfg.T:
            raise ValueError(f"need {cfg.T} draws, got {len(chi)}")
        if not np.all(np.isfinite(chi[: cfg.T])):
            raise ValueError("draws must be finite")
        source = "external"
    if backend == "compiled":
        records = _run_compiled(cfg, chi)
    elif backend == "python":
        records = _run_python(cfg, chi)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return RunArtifact(config=cfg, records=records, events=events_from_records(records),
                       summary=summarize_records(records, cfg.V),
                       provenance=provenance(cfg, backend, source))
