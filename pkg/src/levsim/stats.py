"""Return statistics: tail exponents, volatility clustering, moments.

Absent results are ``None``.  A statistic that cannot be estimated (too few
samples, zero variance) is never replaced by a sentinel number.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sps

DEFAULT_TAIL_FRACTION = 0.025
DEFAULT_MAX_LAG = 100
MIN_PAIRS = 100


@dataclass(frozen=True)
class ReturnSeries:
    values: np.ndarray
    # True where the mispricing was positive at the start of the interval
    active_mask: np.ndarray

    def __post_init__(self):
        if len(self.values) != len(self.active_mask):
            raise ValueError("values and mask differ in length")

    def __len__(self):
        return len(self.values)

    @property
    def masked(self) -> np.ndarray:
        return self.values[self.active_mask]


@dataclass(frozen=True)
class TailFit:
    gamma: float
    k: int
    x_min: float
    side: str
    # least-squares slope of log rank against log size over the same k points
    rank_size_gamma: Optional[float] = None


@dataclass
class RunSummary:
    volatility: Optional[float] = None
    excess_kurtosis: Optional[float] = None
    tail_negative: Optional[TailFit] = None
    tail_positive: Optional[TailFit] = None
    acf: list = field(default_factory=list)
    default_rate: Optional[float] = None
    mean_price: Optional[float] = None
    margin_call_rate: Optional[float] = None
    n_returns: int = 0
    n_active_returns: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: _jsonable(v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        d = dict(d)
        for key in ("tail_negative", "tail_positive"):
            if d.get(key) is not None:
                d[key] = TailFit(**d[key])
        return cls(**d)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def log_returns(prices: Sequence[float], V: float = 1.0) -> ReturnSeries:
    """Log returns of a price path, masked by positive mispricing.

    The mask of the return from ``p[t]`` to ``p[t+1]`` uses ``V - p[t]``.
    """
    p = np.asarray(prices, dtype=np.float64)
    if p.ndim != 1 or len(p) < 2:
        raise ValueError("need at least two prices")
    if not np.all(p > 0):
        raise ValueError("prices must be > 0")
    logp = np.log(p)
    return ReturnSeries(values=np.diff(logp), active_mask=(V - p[:-1]) > 0)


def hill_estimator(samples: Sequence[float], k: int) -> Optional[float]:
    """Hill estimate of the tail exponent from the ``k`` largest samples.

    Uses the ``(k+1)``-th largest value as threshold.  Returns ``None`` when
    the sum of log excesses is zero.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))[::-1]
    if not 1 <= k < len(x):
        raise ValueError("need 1 <= k < len(samples)")
    threshold = x[k]
    if threshold <= 0:
        return None
    denom = float(np.sum(np.log(x[:k] / threshold)))
    if denom <= 0:
        return None
    return k / denom


def rank_size_exponent(samples: Sequence[float], k: int) -> Optional[float]:
    """Tail exponent from a log-log regression of rank on size (top ``k``)."""
    x = np.sort(np.asarray(samples, dtype=np.float64))[::-1][:k]
    if k < 3 or np.all(x == x[0]):
        return None
    ranks = np.arange(1, k + 1)
    slope = np.polyfit(np.log(x), np.log(ranks), 1)[0]
    return float(-slope)


def hill_tail_exponent(samples: Sequence[float], tail_fraction: float = DEFAULT_TAIL_FRACTION,
                       side: str = "negative") -> Optional[TailFit]:
    x = np.asarray(samples, dtype=np.float64)
    if not 0 < tail_fraction < 1:
        raise ValueError("tail_fraction must lie in (0, 1)")
    if np.any(x <= 0):
        raise ValueError("samples must be > 0")
    n = len(x)
    if n < 10 / tail_fraction:
        return None
    k = math.ceil(tail_fraction * n - 1e-9)
    gamma = hill_estimator(x, k)
    if gamma is None:
        return None
    x_min = float(np.sort(x)[::-1][k])
    return TailFit(gamma=gamma, k=k, x_min=x_min, side=side,
                   rank_size_gamma=rank_size_exponent(x, k))


def tail_fits(series: ReturnSeries, tail_fraction: float = DEFAULT_TAIL_FRACTION):
    """(negative, positive) tail fits of the masked returns."""
    r = series.masked
    neg = hill_tail_exponent(-r[r < 0], tail_fraction, "negative")
    pos = hill_tail_exponent(r[r > 0], tail_fraction, "positive")
    return neg, pos


def acf_abs_returns(series: ReturnSeries, max_lag: int = DEFAULT_MAX_LAG,
                    min_pairs: int = MIN_PAIRS) -> list[Optional[float]]:
    """Autocorrelation of ``|r|`` at lags ``0..max_lag`` over masked pairs.

    Mean and variance come from all masked values; the lag-``l`` covariance
    averages over index pairs ``(t, t+l)`` whose masks are both true.
    """
    x = np.abs(np.asarray(series.values, dtype=np.float64))
    mask = np.asarray(series.active_mask, dtype=bool)
    xs = x[mask]
    if len(xs) < 2:
        return [None] * (max_lag + 1)
    mu = xs.mean()
    var = float(np.mean((xs - mu) ** 2))
    if var == 0:
        return [None] * (max_lag + 1)
    dev = np.where(mask, x - mu, 0.0)
    out: list[Optional[float]] = [1.0]
    n = len(x)
    for lag in range(1, max_lag + 1):
        if lag >= n:
            out.append(None)
            continue
        both = mask[:-lag] & mask[lag:]
        cnt = int(both.sum())
        if cnt < min_pairs:
            out.append(None)
            continue
        out.append(float(np.sum(dev[:-lag] * dev[lag:] * both) / cnt / var))
    return out


def white_noise_band(n: int) -> float:
    return 2.0 / math.sqrt(n)


def excess_kurtosis(values: Sequence[float]) -> Optional[float]:
    x = np.asarray(values, dtype=np.float64)
    if len(x) < 4 or np.all(x == x[0]):
        return None
    return float(sps.kurtosis(x, fisher=True, bias=False))


def summary(prices: Sequence[float], V: float, n_defaults: int = 0,
            margin_steps: Optional[np.ndarray] = None, max_lag: int = DEFAULT_MAX_LAG,
            tail_fraction: float = DEFAULT_TAIL_FRACTION) -> RunSummary:
    """Summary statistics of one run.

    ``prices`` is the full path including the initial price; the horizon is
    ``len(prices) - 1``.  ``margin_steps`` flags steps with at least one margin call.
    """
    p = np.asarray(prices, dtype=np.float64)
    T = len(p) - 1
    if T < 1:
        return RunSummary()
    series = log_returns(p, V)
    r = series.values
    neg, pos = tail_fits(series, tail_fraction)
    return RunSummary(
        volatility=float(np.mean(np.abs(r))),
        excess_kurtosis=excess_kurtosis(r),
        tail_negative=neg,
        tail_positive=pos,
        acf=acf_abs_returns(series, max_lag),
        default_rate=n_defaults / T,
        mean_price=float(np.mean(p[1:])),
        margin_call_rate=None if margin_steps is None else float(np.mean(margin_steps)),
        n_returns=T,
        n_active_returns=int(series.active_mask.sum()),
    )


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    return float(sps.spearmanr(x, y).statistic)


def batch_means_se(x: Sequence[float], n_batches: int = 100) -> float:
    """Standard error of the mean of an autocorrelated series via batch means."""
    x = np.asarray(x, dtype=np.float64)
    size = len(x) // n_batches
    if size < 1:
        raise ValueError("series too short for the requested batches")
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))
