"""Named experiments and the multi-seed parameter sweep.

Each scenario writes::

    <out>/<scenario>/manifest.json
    <out>/<scenario>/runs/<seed>.csv      one row of metrics per simulated case
    <out>/<scenario>/tables/<table>.csv

Nothing in the output depends on wall-clock time or execution order, so a
scenario re-run from its manifest reproduces every file byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import io as _io
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats as sps

from . import __version__
from .analytics import demand_derivative
from .config import FundParams, LeveragePolicy, ModelConfig
from .engine import RunArtifact, run, solver_settings
from .io import _atomic_dir_write, write_json
from .stats import acf_abs_returns, log_returns, spearman, white_noise_band

INVESTOR_RETURN_DOC = {
    "investor_return": "time average of the performance EMA r_perf over steps the fund was in business",
    "investor_return_cw": "sum of period P&L (floored at -W(t-1)) over sum of W(t-1), steps in business",
}


class UnknownScenario(KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"unknown scenario {self.name!r}; available: {', '.join(sorted(REGISTRY))}"


# --------------------------------------------------------------------------- tables

@dataclass
class Table:
    columns: list[str]
    rows: list[list] = field(default_factory=list)

    def add(self, *values):
        self.rows.append(list(values))

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_cell(v) for v in row])
        return buf.getvalue()

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return format(v, ".17g") if math.isfinite(v) else ""
    if isinstance(v, np.integer):
        return int(v)
    return v


# --------------------------------------------------------------------------- metrics

def _in_business(rec) -> np.ndarray:
    """Steps at whose start each fund was active."""
    prev_alive = np.vstack([np.ones((1, rec.n_funds), dtype=bool), rec.wealth[:-1] > 0])
    return prev_alive | rec.rebirth


def investor_returns(art: RunArtifact) -> tuple[np.ndarray, np.ndarray]:
    """Per-fund (EMA time-average, capital-weighted) investor returns."""
    rec = art.records
    alive = _in_business(rec)
    W0 = art.config.W0
    w_prev = np.vstack([np.full((1, rec.n_funds), W0), rec.wealth[:-1]])
    w_prev = np.where(rec.rebirth, W0, w_prev)
    n = alive.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ema = np.where(n > 0, (rec.r_perf * alive).sum(axis=0) / n, np.nan)
        pnl = np.maximum(rec.ret * w_prev, -w_prev) * alive
        cap = (w_prev * alive).sum(axis=0)
        cw = np.where(cap > 0, pnl.sum(axis=0) / cap, np.nan)
    return ema, cw


def run_metrics(art: RunArtifact, per_fund: bool = False) -> dict:
    s = art.summary
    rec = art.records
    acf = s.acf
    margin_steps = int(rec.margin_call.any(axis=1).sum()) if rec.n_funds else 0
    out = {
        "volatility": s.volatility,
        "excess_kurtosis": s.excess_kurtosis,
        "gamma_neg": s.tail_negative.gamma if s.tail_negative else None,
        "gamma_pos": s.tail_positive.gamma if s.tail_positive else None,
        "acf_1": acf[1] if len(acf) > 1 else None,
        "acf_10": acf[10] if len(acf) > 10 else None,
        "default_rate": s.default_rate,
        "defaults": int(rec.default.sum()),
        "mean_price": s.mean_price,
        "margin_call_steps": margin_steps,
        "margin_call_rate": s.margin_call_rate,
        "negative_cash_steps": int((rec.cash < 0).any(axis=1).sum()) if rec.n_funds else 0,
        "max_wealth": float(rec.wealth.max()) if rec.wealth.size else None,
        "mean_leverage_max": float(rec.leverage.max(axis=1).mean()) if rec.n_funds and len(rec) else None,
    }
    if per_fund:
        ema, cw = investor_returns(art)
        for h in range(rec.n_funds):
            out[f"investor_return_{h}"] = float(ema[h])
            out[f"investor_return_cw_{h}"] = float(cw[h])
            out[f"mean_wealth_{h}"] = float(rec.wealth[:, h].mean()) if len(rec) else None
    return out


# --------------------------------------------------------------------------- sweep

def set_param(cfg: ModelConfig, param: str, value) -> ModelConfig:
    """Return ``cfg`` with one parameter changed.

    ``lambda_max`` sets every fund's cap; ``funds[i].beta`` / ``funds[i].lambda_max``
    address one fund; ``policy.<field>`` a policy field; anything else a top-level field.
    """
    if param == "lambda_max":
        return cfg.with_lambda_max(float(value))
    m = re.match(r"^funds\[(\d+)\]\.(beta|lambda_max)$", param)
    if m:
        i, name = int(m.group(1)), m.group(2)
        if i >= len(cfg.funds):
            raise KeyError(f"{param}: no fund {i}")
        funds = list(cfg.funds)
        funds[i] = dataclasses.replace(funds[i], **{name: float(value)})
        return cfg.replace(funds=tuple(funds))
    if param.startswith("policy."):
        name = param.split(".", 1)[1]
        if name not in {f.name for f in dataclasses.fields(LeveragePolicy)}:
            raise KeyError(f"{param}: not a policy field")
        return cfg.replace(policy=dataclasses.replace(cfg.policy, **{name: value}))
    names = {f.name for f in dataclasses.fields(ModelConfig)} - {"funds", "policy"}
    if param not in names:
        raise KeyError(f"{param}: not a recognised config field")
    return ModelConfig.from_dict({**cfg.to_dict(), param: value})


@dataclass
class SweepTable:
    param: str
    metric_names: list[str]
    # (value, seed, metrics dict or None, error or None)
    cells: list[tuple] = field(default_factory=list)

    def rows(self) -> Table:
        t = Table([self.param, "seed", "error"] + self.metric_names)
        for value, seed, metrics, err in self.cells:
            vals = [None] * len(self.metric_names) if metrics is None else \
                [metrics.get(k) for k in self.metric_names]
            t.add(value, seed, err, *vals)
        return t

    def values(self) -> list:
        seen = []
        for v, *_ in self.cells:
            if v not in seen:
                seen.append(v)
        return seen

    def metric(self, value, name: str) -> list[float]:
        return [m[name] for v, _, m, _ in self.cells
                if v == value and m is not None and m.get(name) is not None]

    def aggregate(self) -> Table:
        cols = [self.param, "n_ok", "n_failed"]
        for k in self.metric_names:
            cols += [f"{k}_mean", f"{k}_se"]
        t = Table(cols)
        for v in self.values():
            cells = [c for c in self.cells if c[0] == v]
            ok = sum(1 for c in cells if c[2] is not None)
            row = [v, ok, len(cells) - ok]
            for k in self.metric_names:
                xs = self.metric(v, k)
                row += [mean_or_none(xs), se_or_none(xs)]
            t.add(*row)
        return t


def mean_or_none(xs: Sequence[float]) -> Optional[float]:
    return float(np.mean(xs)) if len(xs) else None


def se_or_none(xs: Sequence[float]) -> Optional[float]:
    return float(np.std(xs, ddof=1) / math.sqrt(len(xs))) if len(xs) > 1 else None


def _run_cell(args):
    cfg, per_fund = args
    try:
        return run_metrics(run(cfg), per_fund=per_fund), None
    except Exception as exc:  # recorded per cell, the sweep goes on
        return None, f"{type(exc).__name__}: {exc}".splitlines()[0]


def map_runs(configs: Sequence[ModelConfig], jobs: int = 1, per_fund: bool = False) -> list:
    tasks = [(c, per_fund) for c in configs]
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_cell(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, tasks))


def sweep(base: ModelConfig, param: str, values: Sequence, seeds: Sequence[int], jobs: int = 1,
          per_fund: bool = False) -> SweepTable:
    """Run every (value, seed) pair; results are ordered by value then seed."""
    configs, keys = [], []
    for v in values:
        cfg_v = set_param(base, param, v)
        for s in seeds:
            configs.append(cfg_v.replace(seed=int(s)))
            keys.append((v, int(s)))
    results = map_runs(configs, jobs, per_fund)
    names: list[str] = []
    for metrics, _ in results:
        if metrics is not None:
            names = list(metrics)
            break
    table = SweepTable(param, names)
    for (v, s), (metrics, err) in zip(keys, results):
        table.cells.append((v, s, metrics, err))
    return table


# --------------------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    base: ModelConfig
    param: Optional[str]
    values: tuple
    seeds: tuple[int, ...]
    outputs: tuple[str, ...]
    runner: Callable = field(repr=False, compare=False)
    notes: tuple[str, ...] = ()


@dataclass
class ScenarioResult:
    scenario: Scenario
    seeds: list[int]
    tables: dict[str, Table]
    runs: dict[int, Table]
    manifest: dict


REGISTRY: dict[str, Scenario] = {}


def register(name, description, base, param=None, values=(), seeds=(1, 2, 3, 4, 5),
             outputs=(), notes=()):
    def deco(fn):
        if name in REGISTRY:
            raise ValueError(f"duplicate scenario {name}")
        REGISTRY[name] = Scenario(name, description, base, param, tuple(values),
                                  tuple(seeds), tuple(outputs), fn, tuple(notes))
        return fn
    return deco


def list_scenarios() -> list[Scenario]:
    return [REGISTRY[k] for k in sorted(REGISTRY)]


def _case_rows(cases: Sequence[tuple[str, ModelConfig]], seeds, jobs, per_fund=False):
    """Run each named case for each seed; returns {seed: Table} and {(case, seed): metrics}."""
    configs = [cfg.replace(seed=s) for _, cfg in cases for s in seeds]
    keys = [(name, s) for name, _ in cases for s in seeds]
    results = dict(zip(keys, map_runs(configs, jobs, per_fund)))
    names = []
    for metrics, _ in results.values():
        if metrics is not None:
            names = list(metrics)
            break
    runs = {}
    for s in seeds:
        t = Table(["case", "error"] + names)
        for name, _ in cases:
            metrics, err = results[(name, s)]
            t.add(name, err, *[None if metrics is None else metrics.get(k) for k in names])
        runs[s] = t
    return runs, {k: m for k, (m, _) in results.items()}


def _sweep_runs(table: SweepTable, seeds) -> dict[int, Table]:
    runs = {}
    for s in seeds:
        t = Table([table.param, "error"] + table.metric_names)
        for v, seed, metrics, err in table.cells:
            if seed == s:
                t.add(v, err, *[None if metrics is None else metrics.get(k) for k in table.metric_names])
        runs[s] = t
    return runs


BASE = ModelConfig()


@register("fig2_wealth", "wealth of ten funds (beta 5..50) at leverage cap 20",
          BASE.replace(T=30_000), outputs=("wealth", "collapses", "wealth_summary"), seeds=(1,))
def _fig2(sc: Scenario, seeds, jobs):
    tables = {"wealth": None, "collapses": Table(["seed", "t", "fund", "beta"]),
              "wealth_summary": Table(["seed", "fund", "beta", "max_wealth", "mean_wealth", "defaults"])}
    runs = {}
    for s in seeds:
        art = run(sc.base.replace(seed=s))
        rec = art.records
        if tables["wealth"] is None:
            tables["wealth"] = Table(["seed", "t"] + [f"wealth_{h}" for h in range(rec.n_funds)])
        for i in range(len(rec)):
            tables["wealth"].add(s, i + 1, *rec.wealth[i])
        for e in art.events:
            if e.kind == "default":
                tables["collapses"].add(s, e.t, e.fund, sc.base.funds[e.fund].beta)
        for h, f in enumerate(sc.base.funds):
            tables["wealth_summary"].add(s, h, f.beta, rec.wealth[:, h].max(), rec.wealth[:, h].mean(),
                                         int(rec.default[:, h].sum()))
        t = Table(["case", "error"] + list(run_metrics(art)))
        t.add("lambda_max=20", None, *run_metrics(art).values())
        runs[s] = t
    return tables, runs


def _pooled_masked_returns(cfg: ModelConfig, seeds) -> tuple[np.ndarray, list]:
    pooled, arts = [], []
    for s in seeds:
        art = run(cfg.replace(seed=s))
        series = log_returns(art.records.prices_with_initial, cfg.V)
        pooled.append(series.masked)
        arts.append(art)
    return np.concatenate(pooled) if pooled else np.empty(0), arts


FIG3_CASES = ("noise_only", "lambda_1", "lambda_10")


def _fig3_cases(base: ModelConfig):
    return (("noise_only", base.replace(funds=())), ("lambda_1", base.with_lambda_max(1.0)),
            ("lambda_10", base.with_lambda_max(10.0)))


@register("fig3_distributions", "return distributions: noise only, unlevered funds, cap 10",
          BASE, outputs=("density", "ccdf_negative", "fits"), values=FIG3_CASES)
def _fig3(sc: Scenario, seeds, jobs):
    cases = _fig3_cases(sc.base)
    edges = np.linspace(-0.2, 0.2, 81)
    density = Table(["r_center"] + list(FIG3_CASES))
    ccdf = Table(["case", "R", "P_r_gt_R"])
    fits = Table(["case", "seed", "gamma_neg", "rank_size_gamma_neg", "excess_kurtosis", "volatility",
                  "n_active"])
    dens_cols = []
    runs = {s: Table(["case", "error", "gamma_neg", "excess_kurtosis", "volatility"]) for s in seeds}
    for name, cfg in cases:
        pooled, arts = _pooled_masked_returns(cfg, seeds)
        hist, _ = np.histogram(pooled, bins=edges, density=False)
        width = edges[1] - edges[0]
        dens_cols.append(hist / (len(pooled) * width) if len(pooled) else hist * 0.0)
        neg = -pooled[pooled < 0]
        if len(neg):
            grid = np.geomspace(max(neg.min(), 1e-4), neg.max(), 60)
            for R in grid:
                ccdf.add(name, R, float(np.mean(neg > R) * len(neg) / len(pooled)))
        for s, art in zip(seeds, arts):
            tn = art.summary.tail_negative
            fits.add(name, s, tn.gamma if tn else None, tn.rank_size_gamma if tn else None,
                     art.summary.excess_kurtosis, art.summary.volatility, art.summary.n_active_returns)
            runs[s].add(name, None, tn.gamma if tn else None, art.summary.excess_kurtosis,
                        art.summary.volatility)
    centers = 0.5 * (edges[1:] + edges[:-1])
    for i, c in enumerate(centers):
        density.add(c, *[col[i] for col in dens_cols])
    return {"density": density, "ccdf_negative": ccdf, "fits": fits}, runs


@register("fig3c_gamma_sweep", "tail exponent of negative returns versus leverage cap",
          BASE, param="lambda_max", values=tuple(float(v) for v in range(1, 16)), seeds=(1, 2, 3),
          outputs=("sweep", "aggregate", "trend"))
def _fig3c(sc: Scenario, seeds, jobs):
    table = sweep(sc.base, "lambda_max", sc.values, seeds, jobs)
    agg = table.aggregate()
    trend = Table(["range", "spearman_gamma_vs_lambda"])
    for lo, hi in ((1, 10), (1, 15)):
        vs = [v for v in table.values() if lo <= v <= hi]
        gs = [mean_or_none(table.metric(v, "gamma_neg")) for v in vs]
        pairs = [(v, g) for v, g in zip(vs, gs) if g is not None]
        rho = spearman(*zip(*pairs)) if len(pairs) > 2 else None
        trend.add(f"{lo}-{hi}", rho)
    return {"sweep": table.rows(), "aggregate": agg, "trend": trend}, _sweep_runs(table, seeds)


@register("fig4_acf", "absolute-return autocorrelation and return series, caps 1 and 10",
          BASE, outputs=("acf", "returns"), seeds=(1,), values=("lambda_1", "lambda_10"))
def _fig4(sc: Scenario, seeds, jobs):
    max_lag = 1000
    acf = Table(["seed", "lag", "acf_lambda_1", "acf_lambda_10", "band_lambda_1", "band_lambda_10"])
    returns = Table(["seed", "t", "r_lambda_1", "margin_call_lambda_1", "r_lambda_10",
                     "margin_call_lambda_10"])
    runs = {}
    for s in seeds:
        arts = [run(sc.base.with_lambda_max(lam).replace(seed=s)) for lam in (1.0, 10.0)]
        series = [log_returns(a.records.prices_with_initial, sc.base.V) for a in arts]
        curves = [acf_abs_returns(x, max_lag) for x in series]
        bands = [white_noise_band(int(x.active_mask.sum())) for x in series]
        for lag in range(max_lag + 1):
            acf.add(s, lag, curves[0][lag], curves[1][lag], bands[0], bands[1])
        flags = [a.records.margin_call.any(axis=1) for a in arts]
        for i in range(len(series[0])):
            returns.add(s, i + 1, series[0].values[i], flags[0][i], series[1].values[i], flags[1][i])
        t = Table(["case"] + list(run_metrics(arts[0])))
        for name, a in zip(("lambda_1", "lambda_10"), arts):
            t.add(name, *run_metrics(a).values())
        runs[s] = t
    return {"acf": acf, "returns": returns}, runs


FIG5_CAPS = (("lambda_1", 1.0), ("lambda_2", 2.0), ("lambda_3", 3.0), ("lambda_inf", math.inf))


@register("fig5_derivatives", "dD/dm per unit wealth for beta=10 and caps 1, 2, 3, infinity",
          BASE, outputs=("derivatives",), seeds=(), values=tuple(n for n, _ in FIG5_CAPS))
def _fig5(sc: Scenario, seeds, jobs):
    table = Table(["m"] + [f"dDdm_{n}" for n, _ in FIG5_CAPS])
    for i in range(601):
        m = i / 1000
        table.add(m, *[demand_derivative(m, 10.0, lam, sc.base.V).dDdm_per_wealth for _, lam in FIG5_CAPS])
    return {"derivatives": table}, {}


@register("crash_anatomy", "wealth, leverage, noise demand and price around the first large crash",
          BASE.replace(T=30_000), outputs=("anatomy",), seeds=(1,))
def _crash(sc: Scenario, seeds, jobs):
    table = Table(["seed", "t", "wealth_high_beta", "wealth_mid_beta", "wealth_low_beta",
                   "aggregate_leverage", "xi", "price", "d_xi", "d_price", "margin_call_any"])
    runs = {}
    H = len(sc.base.funds)
    picks = [H - 1, H // 2, 0]
    for s in seeds:
        art = run(sc.base.replace(seed=s))
        rec = art.records
        n_def = rec.default.sum(axis=1)
        # first step where at least a third of the funds default together
        hits = np.nonzero(n_def >= max(1, H // 3))[0]
        centre = int(hits[0]) if len(hits) else int(np.argmin(rec.log_return))
        lo, hi = max(0, centre - 2000), min(len(rec), centre + 500)
        lev = rec.aggregate_leverage
        prices = rec.prices_with_initial
        xis = np.concatenate([[sc.base.V * sc.base.N], rec.xi])
        for i in range(lo, hi):
            table.add(s, i + 1, *[rec.wealth[i, h] for h in picks], lev[i], rec.xi[i], rec.price[i],
                      xis[i + 1] - xis[i], prices[i + 1] - prices[i], bool(rec.margin_call[i].any()))
        t = Table(["case", "crash_t"] + list(run_metrics(art)))
        t.add("lambda_max=20", centre + 1, *run_metrics(art).values())
        runs[s] = t
    return {"anatomy": table}, runs


FIG7_BASE = BASE.replace(
    funds=tuple(FundParams(20.0, 3.0) for _ in range(10)),
    T_reintro=10,
)


@register("fig7_evolution", "investor returns of one fund whose cap varies while nine stay at 3",
          FIG7_BASE, param="funds[9].lambda_max", values=tuple(float(v) for v in range(1, 11)),
          seeds=tuple(range(1, 51)), outputs=("sweep", "aggregate"),
          notes=("T_reintro set to 10 for this experiment; override with --set T_reintro=100",
                 *(f"{k}: {v}" for k, v in INVESTOR_RETURN_DOC.items())))
def _fig7(sc: Scenario, seeds, jobs):
    table = sweep(sc.base, sc.param, sc.values, seeds, jobs, per_fund=True)
    swept = len(sc.base.funds) - 1
    rows = Table([sc.param, "seed", "investor_return_swept", "investor_return_peers",
                  "investor_return_cw_swept", "investor_return_cw_peers", "mean_wealth_swept",
                  "mean_wealth_peers", "defaults"])
    for v, s, m, err in table.cells:
        if m is None:
            rows.add(v, s, *[None] * 7)
            continue
        peers = range(swept)
        rows.add(v, s, m[f"investor_return_{swept}"],
                 float(np.mean([m[f"investor_return_{h}"] for h in peers])),
                 m[f"investor_return_cw_{swept}"],
                 float(np.mean([m[f"investor_return_cw_{h}"] for h in peers])),
                 m[f"mean_wealth_{swept}"], float(np.mean([m[f"mean_wealth_{h}"] for h in peers])),
                 m["defaults"])
    agg = Table([sc.param, "n", "investor_return_swept_mean", "investor_return_swept_se",
                 "investor_return_peers_mean", "investor_return_cw_swept_mean",
                 "investor_return_cw_peers_mean", "mean_wealth_swept_mean"])
    for v in table.values():
        sub = [r for r in rows.rows if r[0] == v and r[2] is not None]
        col = lambda j: [r[j] for r in sub]  # noqa: E731
        agg.add(v, len(sub), mean_or_none(col(2)), se_or_none(col(2)), mean_or_none(col(3)),
                mean_or_none(col(4)), mean_or_none(col(5)), mean_or_none(col(6)))
    return {"sweep": rows, "aggregate": agg}, _sweep_runs(table, seeds)


def sign_test_p(diffs: Sequence[float]) -> float:
    """One-sided exact sign test p-value for ``median(diffs) > 0``; ties dropped."""
    d = [x for x in diffs if x != 0]
    if not d:
        return 1.0
    pos = sum(1 for x in d if x > 0)
    return float(sps.binomtest(pos, len(d), 0.5, alternative="greater").pvalue)


@register("fig6_vol_regulation", "fixed versus volatility-adjusted leverage caps",
          BASE, param="lambda_max", values=tuple(float(v) for v in range(1, 21)),
          seeds=tuple(range(1, 11)), outputs=("default_rates", "regulation_lambda_10", "paired_tests"))
def _fig6(sc: Scenario, seeds, jobs):
    policies = (("fixed", LeveragePolicy.fixed()), ("volatility", LeveragePolicy.volatility_adjusted()))
    rates = Table(["policy", "lambda_max", "n", "default_rate_mean", "default_rate_se",
                   "volatility_mean", "mean_price_mean", "mean_leverage_max_mean"])
    sweeps = {}
    for pname, pol in policies:
        tab = sweep(sc.base.replace(policy=pol), "lambda_max", sc.values, seeds, jobs)
        sweeps[pname] = tab
        for v in tab.values():
            dr = tab.metric(v, "default_rate")
            rates.add(pname, v, len(dr), mean_or_none(dr), se_or_none(dr),
                      mean_or_none(tab.metric(v, "volatility")),
                      mean_or_none(tab.metric(v, "mean_price")),
                      mean_or_none(tab.metric(v, "mean_leverage_max")))
    reg = Table(["policy", "seed", "volatility", "mean_price", "default_rate", "mean_leverage_max"])
    paired = {}
    for pname, _ in policies:
        for v, s, m, _ in sweeps[pname].cells:
            if v == 10.0 and m is not None:
                reg.add(pname, s, m["volatility"], m["mean_price"], m["default_rate"], m["mean_leverage_max"])
                paired.setdefault(s, {})[pname] = m
    tests = Table(["metric", "n_pairs", "n_adaptive_greater", "sign_test_p"])
    for metric, sign in (("volatility", 1.0), ("mean_price", -1.0), ("default_rate", 1.0)):
        diffs = [sign * (p["volatility"][metric] - p["fixed"][metric])
                 for p in paired.values() if len(p) == 2]
        tests.add(metric if sign > 0 else f"-{metric}", len(diffs), sum(1 for d in diffs if d > 0),
                  sign_test_p(diffs))
    runs = {}
    for s in seeds:
        t = Table(["policy", "lambda_max", "error"] + sweeps["fixed"].metric_names)
        for pname, _ in policies:
            tab = sweeps[pname]
            for v, seed, m, err in tab.cells:
                if seed == s:
                    t.add(pname, v, err, *[None if m is None else m.get(k) for k in tab.metric_names])
        runs[s] = t
    return {"default_rates": rates, "regulation_lambda_10": reg, "paired_tests": tests}, runs


# --------------------------------------------------------------------------- driver

def _apply_overrides(sc: Scenario, overrides: dict) -> Scenario:
    if not overrides:
        return sc
    base = sc.base
    for k, v in overrides.items():
        base = set_param(base, k, v)
    return dataclasses.replace(sc, base=base)


def run_scenario(name: str, seeds: Optional[Sequence[int]] = None, out_dir: Optional[str | os.PathLike] = None,
                 jobs: int = 1, overrides: Optional[dict] = None) -> ScenarioResult:
    """Run a registered scenario and optionally write its output directory.

    ``overrides`` maps parameter names (as accepted by :func:`set_param`) to values
    and is applied to the scenario's base config, e.g. ``{"T": 20000}``.
    """
    if name not in REGISTRY:
        raise UnknownScenario(name)
    sc = _apply_overrides(REGISTRY[name], dict(overrides or {}))
    seeds = list(sc.seeds if seeds is None else seeds)
    tables, runs = sc.runner(sc, seeds, jobs)
    tables = {k: v for k, v in tables.items() if v is not None}
    man = {
        "scenario": sc.name,
        "description": sc.description,
        "seeds": seeds,
        "overrides": dict(overrides or {}),
        "base_config": sc.base.to_dict(),
        "param": sc.param,
        "values": list(sc.values),
        "tables": sorted(tables),
        "notes": list(sc.notes),
        "solver": solver_settings(),
        "version": __version__,
    }
    result = ScenarioResult(sc, seeds, tables, runs, man)
    if out_dir is not None:
        write_scenario(result, out_dir)
    return result


def write_scenario(result: ScenarioResult, out_dir: str | os.PathLike) -> Path:
    root = Path(out_dir) / result.scenario.name
    _atomic_dir_write(root, {"manifest.json": lambda p: write_json(result.manifest, p)})
    _atomic_dir_write(root / "tables", {f"{k}.csv": (lambda p, t=t: Path(p).write_text(t.to_csv()))
                                        for k, t in result.tables.items()})
    if result.runs:
        _atomic_dir_write(root / "runs", {f"{s}.csv": (lambda p, t=t: Path(p).write_text(t.to_csv()))
                                          for s, t in result.runs.items()})
    return root


def rerun_from_manifest(path: str | os.PathLike, out_dir: Optional[str | os.PathLike] = None,
                        jobs: int = 1) -> ScenarioResult:
    man = json.loads(Path(path).read_text())
    return run_scenario(man["scenario"], man["seeds"], out_dir, jobs, man.get("overrides") or {})
