"""Gradient-play disequilibrium dynamics.

Every SC channel moves its supply along its profit gradient, every customer
its demand along its net-utility gradient, and every SC price follows excess
demand, each scaled by its own time constant. Optional per-SC capacity
multipliers follow a projected (nonnegative-orthant) flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .equilibrium import solve_kkt_closed_form
from .model import MarketError, MarketScenario, MarketState, StateLayout

DIVERGENCE_THRESHOLD = 1e12
CONVERGENCE_THRESHOLD = 1e-8


@dataclass(frozen=True)
class PerturbationSpec:
    """Supply-availability perturbation plus declared spectral-norm bounds.

    ``supply_factors`` scales each listed SC's supply response (missing SCs
    keep factor 1). ``pi_sc`` and ``pi_c`` bound the norms of the supply and
    curtailment perturbation matrices; they are checked against the actual
    matrices by :func:`scmarket.stability.check_perturbation_bounds`.
    """

    supply_factors: Mapping[str, float] = field(default_factory=dict)
    pi_sc: float = 0.0
    pi_c: float = 0.0

    def __post_init__(self):
        if self.pi_sc < 0 or self.pi_c < 0:
            raise ValueError("perturbation bounds must be nonnegative")
        for k, v in self.supply_factors.items():
            if not math.isfinite(v):
                raise ValueError(f"supply factor for {k} must be finite")

    def factor_vector(self, layout: StateLayout) -> np.ndarray:
        unknown = set(self.supply_factors) - set(layout.price_keys)
        if unknown:
            raise MarketError(f"perturbation names unknown SCs {sorted(unknown)}")
        per_sc = np.array([self.supply_factors.get(k, 1.0) for k in layout.price_keys], dtype=float)
        return per_sc[layout.supply_sc]


@dataclass(frozen=True)
class DynamicState:
    market: MarketState
    multipliers: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.multipliers.items():
            if v < 0:
                raise ValueError(f"multiplier {k} must be nonnegative, got {v}")

    @property
    def capacity_enabled(self) -> bool:
        return bool(self.multipliers)

    def vectors(self, layout: StateLayout) -> tuple[np.ndarray, np.ndarray]:
        x1 = self.market.to_vector(layout)
        if not self.multipliers:
            return x1, np.zeros(0)
        if set(self.multipliers) != set(layout.price_keys):
            raise MarketError("multipliers must cover exactly the scenario's SCs")
        return x1, np.array([self.multipliers[k] for k in layout.price_keys], dtype=float)

    @classmethod
    def from_vectors(cls, layout: StateLayout, x1, x2=()) -> "DynamicState":
        x2 = np.asarray(x2, dtype=float)
        mult = dict(zip(layout.price_keys, map(float, x2))) if x2.size else {}
        return cls(MarketState.from_vector(layout, x1), mult)

    @classmethod
    def at(cls, state: MarketState, layout: Optional[StateLayout] = None, capacity: bool = False) -> "DynamicState":
        if not capacity:
            return cls(state)
        keys = layout.price_keys if layout is not None else tuple(state.rho)
        return cls(state, {k: 0.0 for k in keys})


@dataclass(frozen=True)
class TrajectoryRecord:
    """Recorded samples; ``x1`` rows follow the scenario layout, ``x2`` holds multipliers."""

    times: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    terminal_status: str
    labels: tuple[str, ...]
    layout: StateLayout = field(repr=False, compare=False)

    @property
    def states(self) -> list[DynamicState]:
        return [DynamicState.from_vectors(self.layout, a, b) for a, b in zip(self.x1, self.x2)]

    @property
    def final(self) -> DynamicState:
        return DynamicState.from_vectors(self.layout, self.x1[-1], self.x2[-1])


def project_multiplier_rhs(cx1_minus_max: float, multiplier: float) -> float:
    """Projected multiplier flow: an inactive multiplier may only grow."""
    if multiplier < 0:
        raise ValueError("multiplier must be nonnegative")
    if multiplier == 0:
        return max(0.0, cx1_minus_max)
    return cx1_minus_max


def rhs_vectors(
    x1: np.ndarray,
    x2: np.ndarray,
    layout: StateLayout,
    supply_factor: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Time derivatives of ``(x1, x2)``; ``x2`` empty means capacity dynamics off."""
    q, d, rho = layout.split(x1)
    delta = np.ones(layout.n_supply) if supply_factor is None else supply_factor
    mu = x2[layout.supply_sc] if x2.size else 0.0
    dq = (rho[layout.supply_sc] - delta * layout.supply_beta * q - layout.supply_alpha - mu) / layout.supply_tau
    dd = (layout.demand_beta * d + layout.demand_alpha - rho[layout.demand_sc]) / layout.demand_tau
    demand = np.bincount(layout.demand_sc, weights=layout.demand_eff * d, minlength=layout.n_sc)
    supply = np.bincount(layout.supply_sc, weights=delta * q, minlength=layout.n_sc)
    drho = (demand - supply) / layout.tau_rho
    if x2.size:
        committed = np.bincount(layout.supply_sc, weights=q, minlength=layout.n_sc)
        gap = committed - layout.vm_max_sc
        dmu = np.where(x2 > 0, gap, np.maximum(gap, 0.0))
    else:
        dmu = np.zeros(0)
    return np.concatenate([dq, dd, drho]), dmu


def rhs(state: DynamicState, scenario: MarketScenario, perturbation: Optional[PerturbationSpec] = None) -> np.ndarray:
    """Derivative of the full state, ordered as the layout followed by the multipliers."""
    layout = scenario.layout
    x1, x2 = state.vectors(layout)
    factor = perturbation.factor_vector(layout) if perturbation is not None else None
    dx1, dx2 = rhs_vectors(x1, x2, layout, factor)
    return np.concatenate([dx1, dx2])


def euler_step(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float) -> np.ndarray:
    return x + dt * f(x)


def rk4_step(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


STEPPERS = {"euler": euler_step, "rk4": rk4_step}


def integrate(
    scenario: MarketScenario,
    initial: DynamicState,
    t_end: float,
    dt: float = 1e-3,
    method: str = "rk4",
    perturbation: Optional[PerturbationSpec] = None,
    record_every: int = 1,
    stop_on_convergence: bool = True,
) -> TrajectoryRecord:
    """Fixed-step integration of the gradient-play flow from ``initial``.

    Stops early with status ``converged`` once the max-norm of the derivative
    drops below 1e-8 (unless ``stop_on_convergence`` is off), or ``diverged``
    once any state magnitude exceeds 1e12. Multipliers are clamped to be
    nonnegative after every step. The last step is shortened to land on
    ``t_end`` exactly.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    if not (t_end > 0 and math.isfinite(t_end)):
        raise ValueError(f"t_end must be positive and finite, got {t_end}")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    try:
        step = STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; expected one of {sorted(STEPPERS)}") from None

    layout = scenario.layout
    x1, x2 = initial.vectors(layout)
    n1 = x1.size
    factor = perturbation.factor_vector(layout) if perturbation is not None else None

    def f(z):
        a, b = rhs_vectors(z[:n1], z[n1:], layout, factor)
        return np.concatenate([a, b])

    z = np.concatenate([x1, x2])
    times = [0.0]
    rows = [z.copy()]
    status = "max_time"
    n_steps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    t = 0.0
    for k in range(1, n_steps + 1):
        h = min(dt, t_end - t) if k == n_steps else dt
        z = step(f, z, h)
        if x2.size:
            np.maximum(z[n1:], 0.0, out=z[n1:])
        t = t_end if k == n_steps else k * dt
        if not np.all(np.isfinite(z)) or np.abs(z).max() > DIVERGENCE_THRESHOLD:
            status = "diverged"
        elif stop_on_convergence and np.abs(f(z)).max() < CONVERGENCE_THRESHOLD:
            status = "converged"
        if status != "max_time" or k % record_every == 0 or k == n_steps:
            times.append(t)
            rows.append(z.copy())
        if status != "max_time":
            break
    data = np.array(rows)
    return TrajectoryRecord(
        times=np.array(times),
        x1=data[:, :n1],
        x2=data[:, n1:],
        terminal_status=status,
        labels=tuple(layout.labels) + tuple(f"mu[{k}]" for k in layout.price_keys if x2.size),
        layout=layout,
    )


def perturb_state(state: DynamicState, relative_magnitude: float, seed: int, layout: Optional[StateLayout] = None) -> DynamicState:
    """Scale every component by an independent ``1 + u``, ``u ~ U[-m, m]``."""
    if relative_magnitude < 0:
        raise ValueError("relative_magnitude must be nonnegative")
    if layout is None:
        layout = _layout_of(state.market)
    x1, x2 = state.vectors(layout)
    rng = np.random.default_rng(seed)
    u = rng.uniform(-relative_magnitude, relative_magnitude, size=x1.size + x2.size)
    z = np.concatenate([x1, x2]) * (1.0 + u)
    return DynamicState.from_vectors(layout, z[: x1.size], z[x1.size:])


def _layout_of(state: MarketState) -> StateLayout:
    # key-order layout for states built outside a scenario; only ordering is used
    empty = np.zeros(0)
    return StateLayout(
        supply_keys=tuple(state.vm_supply), demand_keys=tuple(state.vm_demand), price_keys=tuple(state.rho),
        supply_alpha=empty, supply_beta=empty, supply_tau=empty, supply_lo=empty, supply_hi=empty,
        supply_sc=np.zeros(0, dtype=int), demand_alpha=empty, demand_beta=empty, demand_tau=empty,
        demand_lo=empty, demand_hi=empty, demand_sc=np.zeros(0, dtype=int), demand_eff=empty,
        tau_rho=empty, vm_max_sc=empty,
    )


def perturbed_equilibrium(scenario: MarketScenario, perturbation: Optional[PerturbationSpec] = None) -> MarketState:
    """Rest point of the flow under supply factors.

    A factor ``f`` on SC i leaves the clearing price unchanged and divides each
    of its supply quantities by ``f``.
    """
    base = solve_kkt_closed_form(scenario).state
    if perturbation is None:
        return base
    layout = scenario.layout
    x = base.to_vector(layout)
    x[layout.supply_slice] /= perturbation.factor_vector(layout)
    return MarketState.from_vector(layout, x)
