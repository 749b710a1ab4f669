"""Model parameters and their validation.

All exogenous inputs of a simulation live in :class:`ModelConfig`.  Configs are
frozen dataclasses so they can be hashed, shared between worker processes and
embedded verbatim in run manifests.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any


class ConfigError(ValueError):
    """Raised when a configuration violates a model invariant."""

    def __init__(self, key: str, rule: str):
        self.key = key
        self.rule = rule
        super().__init__(f"{key}: {rule}")


@dataclass(frozen=True)
class FundParams:
    beta: float
    lambda_max: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError("beta", "must be > 0")
        if not self.lambda_max >= 1:
            raise ConfigError("lambda_max", "leverage cap must be >= 1")

    @property
    def m_crit(self) -> float:
        """Mispricing at which the leverage cap starts to bind."""
        return self.lambda_max / self.beta


@dataclass(frozen=True)
class LeveragePolicy:
    """Leverage cap imposed by the lender.

    ``kind="fixed"`` keeps every fund at its own ``lambda_max``.
    ``kind="volatility"`` shrinks the cap to ``max(1, lambda_max / (1 + kappa * var))``
    where ``var`` is the trailing variance over ``tau`` steps, measured on log
    returns (``vol_measure="log_return"``) or raw prices (``"price"``).
    """

    kind: str = "fixed"
    kappa: float = 100.0
    tau: int = 10
    vol_measure: str = "log_return"

    def __post_init__(self):
        if self.kind not in ("fixed", "volatility"):
            raise ConfigError("policy.kind", "must be 'fixed' or 'volatility'")
        if not self.kappa >= 0:
            raise ConfigError("policy.kappa", "must be >= 0")
        if int(self.tau) != self.tau or self.tau < 2:
            raise ConfigError("policy.tau", "must be an integer >= 2")
        if self.vol_measure not in ("log_return", "price"):
            raise ConfigError("policy.vol_measure", "must be 'log_return' or 'price'")

    @classmethod
    def fixed(cls) -> "LeveragePolicy":
        return cls(kind="fixed")

    @classmethod
    def volatility_adjusted(cls, kappa: float = 100.0, tau: int = 10) -> "LeveragePolicy":
        return cls(kind="volatility", kappa=kappa, tau=tau)


def default_funds(lambda_max: float = 20.0) -> tuple[FundParams, ...]:
    """Ten funds with aggression 5, 10, ..., 50 sharing one leverage cap."""
    return tuple(FundParams(beta=5.0 * (i + 1), lambda_max=lambda_max) for i in range(10))


@dataclass(frozen=True)
class ModelConfig:
    V: float = 1.0
    N: float = 1000.0
    sigma: float = 0.035
    rho: float = 0.99
    funds: tuple[FundParams, ...] = field(default_factory=default_funds)
    a: float = 0.1
    b: float = 0.15
    r_b: float = 0.005
    W0: float = 2.0
    survival_fraction: float = 0.1
    T_reintro: int = 100
    policy: LeveragePolicy = field(default_factory=LeveragePolicy)
    T: int = 100_000
    seed: int = 0
    # False evaluates investor flows at the previous price during clearing.
    flows_in_clearing: bool = True

    def __post_init__(self):
        # lists coming from JSON are normalised to tuples so the config stays hashable
        if not isinstance(self.funds, tuple):
            object.__setattr__(self, "funds", tuple(self.funds))
        for i, f in enumerate(self.funds):
            if not isinstance(f, FundParams):
                raise ConfigError(f"funds[{i}]", "must be FundParams")
        checks = [
            ("V", self.V > 0, "must be > 0"),
            ("N", self.N > 0, "must be > 0"),
            ("sigma", self.sigma >= 0 and math.isfinite(self.sigma), "must be finite and >= 0"),
            ("rho", 0 < self.rho <= 1, "must lie in (0, 1]"),
            ("a", 0 < self.a < 1, "must lie in (0, 1)"),
            ("b", self.b >= 0, "must be >= 0"),
            ("r_b", math.isfinite(self.r_b), "must be finite"),
            ("W0", self.W0 > 0, "must be > 0"),
            ("survival_fraction", 0 <= self.survival_fraction < 1, "must lie in [0, 1)"),
            ("T_reintro", int(self.T_reintro) == self.T_reintro and self.T_reintro >= 0,
             "must be an integer >= 0"),
            ("T", int(self.T) == self.T and self.T >= 0, "must be an integer >= 0"),
            ("seed", int(self.seed) == self.seed and self.seed >= 0, "must be an integer >= 0"),
        ]
        for key, ok, rule in checks:
            if not ok:
                raise ConfigError(key, rule)

    @property
    def survival_threshold(self) -> float:
        return self.survival_fraction * self.W0

    def replace(self, **changes: Any) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def with_lambda_max(self, lambda_max: float) -> "ModelConfig":
        """Same roster, every fund given the leverage cap ``lambda_max``."""
        funds = tuple(FundParams(f.beta, lambda_max) for f in self.funds)
        return self.replace(funds=funds)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self) | {"funds": [dataclasses.asdict(f) for f in self.funds]}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        """Build a config from a plain mapping; missing keys take defaults.

        Unknown keys raise :class:`ConfigError` naming the key.
        """
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(key, "unknown key")
            if key == "funds":
                value = tuple(_fund_from_dict(i, v) for i, v in enumerate(value))
            elif key == "policy":
                value = _policy_from_dict(value)
            elif key in ("T", "T_reintro", "seed"):
                value = _as_int(key, value)
            elif key == "flows_in_clearing":
                if not isinstance(value, bool):
                    raise ConfigError(key, "must be a boolean")
            else:
                value = _as_float(key, value)
            kwargs[key] = value
        return cls(**kwargs)


def _as_float(key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, "must be a number")
    return float(value)


def _as_int(key: str, value: Any) -> int:
    if isinstance(value, bool):
        raise ConfigError(key, "must be an integer")
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    if not isinstance(value, int):
        raise ConfigError(key, "must be an integer")
    return value


def _fund_from_dict(i: int, data: Any) -> FundParams:
    if not isinstance(data, dict):
        raise ConfigError(f"funds[{i}]", "must be an object")
    extra = set(data) - {"beta", "lambda_max"}
    if extra:
        raise ConfigError(f"funds[{i}].{sorted(extra)[0]}", "unknown key")
    try:
        return FundParams(
            beta=_as_float(f"funds[{i}].beta", data.get("beta", 10.0)),
            lambda_max=_as_float(f"funds[{i}].lambda_max", data.get("lambda_max", 1.0)),
        )
    except ConfigError as exc:
        if exc.key.startswith("funds"):
            raise
        raise ConfigError(f"funds[{i}].{exc.key}", exc.rule) from None


def _policy_from_dict(data: Any) -> LeveragePolicy:
    if not isinstance(data, dict):
        raise ConfigError("policy", "must be an object")
    known = {f.name for f in dataclasses.fields(LeveragePolicy)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"policy.{sorted(extra)[0]}", "unknown key")
    kwargs = dict(data)
    if "kappa" in kwargs:
        kwargs["kappa"] = _as_float("policy.kappa", kwargs["kappa"])
    if "tau" in kwargs:
        kwargs["tau"] = _as_int("policy.tau", kwargs["tau"])
    return LeveragePolicy(**kwargs)
