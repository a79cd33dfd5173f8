"""Scenario data types and the cost, utility and welfare functions of the SC market."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

CHANNELS = ("reserved", "borrowed", "public_cloud")
CHANNEL_SHORT = {"reserved": "r", "borrowed": "b", "public_cloud": "pc"}


class MarketError(ValueError):
    """Base class for errors raised on invalid or unsolvable market inputs."""


class ScenarioError(MarketError):
    """A scenario violates one or more type invariants."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid scenario: " + "; ".join(self.violations))


class DegenerateScenarioError(MarketError):
    pass


class InfeasibleError(MarketError):
    pass


@dataclass(frozen=True)
class QuadraticCoefficients:
    """Coefficients of ``alpha * q + beta / 2 * q**2``.

    Costs and utilities both use this shape; the market convention is
    ``alpha > 0`` and ``beta < 0`` (decreasing linear marginals).
    """

    alpha: float
    beta: float

    def value(self, q):
        return self.alpha * q + 0.5 * self.beta * q * q

    def marginal(self, q):
        return self.alpha + self.beta * q


@dataclass(frozen=True)
class SupplyChannelParams:
    channel: str
    coeffs: QuadraticCoefficients
    vm_min: float
    vm_max: float
    tau: float
    enabled: bool = True


@dataclass(frozen=True)
class SmallCloudParams:
    id: str
    channels: tuple[SupplyChannelParams, ...]
    tau_rho: float

    @property
    def enabled_channels(self) -> tuple[SupplyChannelParams, ...]:
        # canonical r, b, pc order regardless of declaration order
        rank = {name: k for k, name in enumerate(CHANNELS)}
        active = [ch for ch in self.channels if ch.enabled and ch.vm_max > 0]
        return tuple(sorted(active, key=lambda ch: rank.get(ch.channel, len(rank))))

    @property
    def vm_max_total(self) -> float:
        return float(sum(ch.vm_max for ch in self.enabled_channels))


@dataclass(frozen=True)
class CustomerParams:
    id: str
    sc_id: str
    coeffs_ag: QuadraticCoefficients
    tau_ag: float
    vm_min: float
    vm_max: float
    kappa1: float = 0.0
    kappa2: float = 0.0
    coeffs_e: Optional[QuadraticCoefficients] = None
    coeffs_c: Optional[QuadraticCoefficients] = None
    coeffs_s: Optional[QuadraticCoefficients] = None

    @property
    def effective_factor(self) -> float:
        return 1.0 - self.kappa1 - self.kappa2


@dataclass(frozen=True)
class MarketScenario:
    scs: tuple[SmallCloudParams, ...]
    customers: tuple[CustomerParams, ...]

    @property
    def assignment(self) -> dict[str, str]:
        return {c.id: c.sc_id for c in self.customers}

    def sc(self, sc_id: str) -> SmallCloudParams:
        for sc in self.scs:
            if sc.id == sc_id:
                return sc
        raise KeyError(sc_id)

    def customers_of(self, sc_id: str) -> tuple[CustomerParams, ...]:
        return tuple(c for c in self.customers if c.sc_id == sc_id)

    @cached_property
    def layout(self) -> "StateLayout":
        return StateLayout.from_scenario(self)


@dataclass(frozen=True)
class StateLayout:
    """Fixed ordering of the state vector: supplies (SC-major), demands, prices.

    Also carries the per-component parameter arrays used by the vectorised
    solvers and the dynamics.
    """

    supply_keys: tuple[tuple[str, str], ...]
    demand_keys: tuple[str, ...]
    price_keys: tuple[str, ...]
    supply_alpha: np.ndarray
    supply_beta: np.ndarray
    supply_tau: np.ndarray
    supply_lo: np.ndarray
    supply_hi: np.ndarray
    supply_sc: np.ndarray
    demand_alpha: np.ndarray
    demand_beta: np.ndarray
    demand_tau: np.ndarray
    demand_lo: np.ndarray
    demand_hi: np.ndarray
    demand_sc: np.ndarray
    demand_eff: np.ndarray
    tau_rho: np.ndarray
    vm_max_sc: np.ndarray

    @classmethod
    def from_scenario(cls, scenario: MarketScenario) -> "StateLayout":
        sc_index = {sc.id: k for k, sc in enumerate(scenario.scs)}
        supply = [(k, sc, ch) for k, sc in enumerate(scenario.scs) for ch in sc.enabled_channels]
        cust = list(scenario.customers)

        def arr(values):
            return np.asarray(list(values), dtype=float)

        return cls(
            supply_keys=tuple((sc.id, ch.channel) for _, sc, ch in supply),
            demand_keys=tuple(c.id for c in cust),
            price_keys=tuple(sc.id for sc in scenario.scs),
            supply_alpha=arr(ch.coeffs.alpha for *_, ch in supply),
            supply_beta=arr(ch.coeffs.beta for *_, ch in supply),
            supply_tau=arr(ch.tau for *_, ch in supply),
            supply_lo=arr(ch.vm_min for *_, ch in supply),
            supply_hi=arr(ch.vm_max for *_, ch in supply),
            supply_sc=np.asarray([k for k, *_ in supply], dtype=int),
            demand_alpha=arr(c.coeffs_ag.alpha for c in cust),
            demand_beta=arr(c.coeffs_ag.beta for c in cust),
            demand_tau=arr(c.tau_ag for c in cust),
            demand_lo=arr(c.vm_min for c in cust),
            demand_hi=arr(c.vm_max for c in cust),
            demand_sc=np.asarray([sc_index[c.sc_id] for c in cust], dtype=int),
            demand_eff=arr(c.effective_factor for c in cust),
            tau_rho=arr(sc.tau_rho for sc in scenario.scs),
            vm_max_sc=arr(sc.vm_max_total for sc in scenario.scs),
        )

    @property
    def n_supply(self) -> int:
        return len(self.supply_keys)

    @property
    def n_demand(self) -> int:
        return len(self.demand_keys)

    @property
    def n_sc(self) -> int:
        return len(self.price_keys)

    @property
    def size(self) -> int:
        return self.n_supply + self.n_demand + self.n_sc

    @property
    def supply_slice(self) -> slice:
        return slice(0, self.n_supply)

    @property
    def demand_slice(self) -> slice:
        return slice(self.n_supply, self.n_supply + self.n_demand)

    @property
    def price_slice(self) -> slice:
        return slice(self.n_supply + self.n_demand, self.size)

    @property
    def labels(self) -> list[str]:
        out = [f"vm_{CHANNEL_SHORT[ch]}[{sc}]" for sc, ch in self.supply_keys]
        out += [f"vm_ag[{c}]" for c in self.demand_keys]
        out += [f"rho[{sc}]" for sc in self.price_keys]
        return out

    def capacity_matrix(self) -> np.ndarray:
        """Row i sums the committed supply of SC i over the full state vector."""
        c = np.zeros((self.n_sc, self.size))
        c[self.supply_sc, np.arange(self.n_supply)] = 1.0
        return c

    def split(self, x: np.ndarray):
        return x[self.supply_slice], x[self.demand_slice], x[self.price_slice]


@dataclass(frozen=True)
class MarketState:
    """VM quantities and per-SC prices."""

    vm_supply: Mapping[tuple[str, str], float] = field(default_factory=dict)
    vm_demand: Mapping[str, float] = field(default_factory=dict)
    rho: Mapping[str, float] = field(default_factory=dict)

    def to_vector(self, layout: StateLayout) -> np.ndarray:
        if (
            set(self.vm_supply) != set(layout.supply_keys)
            or set(self.vm_demand) != set(layout.demand_keys)
            or set(self.rho) != set(layout.price_keys)
        ):
            raise MarketError("state keys do not match the scenario layout")
        return np.array(
            [self.vm_supply[k] for k in layout.supply_keys]
            + [self.vm_demand[k] for k in layout.demand_keys]
            + [self.rho[k] for k in layout.price_keys],
            dtype=float,
        )

    @classmethod
    def from_vector(cls, layout: StateLayout, x) -> "MarketState":
        x = np.asarray(x, dtype=float)
        if x.shape != (layout.size,):
            raise MarketError(f"expected state of length {layout.size}, got shape {x.shape}")
        q, d, p = layout.split(x)
        return cls(
            vm_supply=dict(zip(layout.supply_keys, map(float, q))),
            vm_demand=dict(zip(layout.demand_keys, map(float, d))),
            rho=dict(zip(layout.price_keys, map(float, p))),
        )

    @classmethod
    def zeros(cls, layout: StateLayout) -> "MarketState":
        return cls.from_vector(layout, np.zeros(layout.size))


def _check_finite(q):
    if not np.all(np.isfinite(q)):
        raise ValueError(f"quantity must be finite, got {q!r}")


def cost(q, coeffs: QuadraticCoefficients):
    _check_finite(q)
    return coeffs.value(q)


def marginal_cost(q, coeffs: QuadraticCoefficients):
    _check_finite(q)
    return coeffs.marginal(q)


def utility(q, coeffs: QuadraticCoefficients):
    _check_finite(q)
    return coeffs.value(q)


def marginal_utility(q, coeffs: QuadraticCoefficients):
    _check_finite(q)
    return coeffs.marginal(q)


def curtailed_demand(vm_e, kappa1: float, kappa2: float):
    """VMs consumed by the curtailed share of a Type-I job."""
    if not (0.0 <= kappa1 < 1.0 and 0.0 <= kappa2 < 1.0) or kappa1 + kappa2 >= 1.0:
        raise ValueError(f"need 0 <= kappa1, kappa2 and kappa1 + kappa2 < 1, got {kappa1}, {kappa2}")
    _check_finite(vm_e)
    return (kappa1 + kappa2) * vm_e


def sc_profit(rho, q, coeffs: QuadraticCoefficients):
    return rho * q - cost(q, coeffs)


def customer_net_utility(rho, q, coeffs: QuadraticCoefficients):
    return utility(q, coeffs) - rho * q


def effective_demand(customer: CustomerParams, state: MarketState) -> float:
    return state.vm_demand[customer.id] * customer.effective_factor


def social_welfare(state: MarketState, scenario: MarketScenario) -> float:
    """Total customer utility minus total SC cost over every enabled channel."""
    total = 0.0
    for c in scenario.customers:
        total += utility(state.vm_demand[c.id], c.coeffs_ag)
    for sc in scenario.scs:
        for ch in sc.enabled_channels:
            total -= cost(state.vm_supply[(sc.id, ch.channel)], ch.coeffs)
    return float(total)


def social_welfare_vector(x: np.ndarray, layout: StateLayout) -> float:
    q, d, _ = layout.split(np.asarray(x, dtype=float))
    u = layout.demand_alpha * d + 0.5 * layout.demand_beta * d * d
    c = layout.supply_alpha * q + 0.5 * layout.supply_beta * q * q
    return float(u.sum() - c.sum())


def _coeff_violations(where: str, coeffs: Optional[QuadraticCoefficients]) -> Iterable[str]:
    if coeffs is None:
        return
    if not (math.isfinite(coeffs.alpha) and coeffs.alpha > 0):
        yield f"{where}.alpha: must be > 0 (got {coeffs.alpha})"
    if not (math.isfinite(coeffs.beta) and coeffs.beta < 0):
        yield f"{where}.beta: must be < 0 (got {coeffs.beta})"


def _bounds_violations(where: str, lo: float, hi: float) -> Iterable[str]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        yield f"{where}.vm_min/vm_max: must be finite"
    elif lo < 0:
        yield f"{where}.vm_min: must be >= 0 (got {lo})"
    elif lo > hi:
        yield f"{where}.vm_min: must be <= vm_max ({lo} > {hi})"


def _positive(where: str, value: float) -> Iterable[str]:
    if not (math.isfinite(value) and value > 0):
        yield f"{where}: must be > 0 (got {value})"


def validate_scenario(scenario: MarketScenario) -> list[str]:
    """Return every invariant violation in ``scenario``; empty when valid."""
    out: list[str] = []
    if not scenario.scs:
        out.append("scs: at least one SC is required")
    seen: set[str] = set()
    for sc in scenario.scs:
        where = f"sc[{sc.id}]"
        if sc.id in seen:
            out.append(f"{where}.id: duplicate SC id")
        seen.add(sc.id)
        out.extend(_positive(f"{where}.tau_rho", sc.tau_rho))
        kinds = [ch.channel for ch in sc.channels]
        for kind in kinds:
            if kind not in CHANNELS:
                out.append(f"{where}.channels: unknown channel kind {kind!r}")
        if len(set(kinds)) != len(kinds):
            out.append(f"{where}.channels: channel kinds must be unique")
        for ch in sc.channels:
            cw = f"{where}.{ch.channel}"
            out.extend(_coeff_violations(cw, ch.coeffs))
            out.extend(_bounds_violations(cw, ch.vm_min, ch.vm_max))
            out.extend(_positive(f"{cw}.tau", ch.tau))
            if ch.enabled and ch.vm_max == 0:
                out.append(f"{cw}.enabled: a channel with vm_max = 0 must be disabled")
        if not sc.enabled_channels:
            out.append(f"{where}.channels: at least one enabled channel is required")

    cust_seen: set[str] = set()
    for c in scenario.customers:
        where = f"customer[{c.id}]"
        if c.id in cust_seen:
            out.append(f"{where}.id: duplicate customer id")
        cust_seen.add(c.id)
        if c.sc_id not in seen:
            out.append(f"{where}.sc_id: unknown SC {c.sc_id!r}")
        out.extend(_coeff_violations(f"{where}.ag", c.coeffs_ag))
        for name in ("e", "c", "s"):
            out.extend(_coeff_violations(f"{where}.{name}", getattr(c, f"coeffs_{name}")))
        out.extend(_bounds_violations(where, c.vm_min, c.vm_max))
        out.extend(_positive(f"{where}.tau_ag", c.tau_ag))
        for name in ("kappa1", "kappa2"):
            k = getattr(c, name)
            if not (math.isfinite(k) and 0.0 <= k < 1.0):
                out.append(f"{where}.{name}: must lie in [0, 1) (got {k})")
        if c.kappa1 + c.kappa2 >= 1.0:
            out.append(f"{where}.kappa1+kappa2: must be < 1")
    return out


def check_scenario(scenario: MarketScenario) -> MarketScenario:
    violations = validate_scenario(scenario)
    if violations:
        raise ScenarioError(violations)
    return scenario
