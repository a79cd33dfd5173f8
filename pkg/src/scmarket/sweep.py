"""Parameter sweeps of the linearised stability margin."""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import MarketScenario, check_scenario
from .stability import assemble_linearization, hurwitz_check

MAP_COLUMNS = ("tau_rho", "tau_ag", "kappa1", "kappa2", "max_real_eig", "is_hurwitz")


def _default_tau_rho() -> tuple[float, ...]:
    # zero would divide the price flow by zero, so the range starts at 0.05
    return tuple(float(v) for v in np.linspace(0.05, 5.0, 25))


def _default_tau_ag() -> tuple[float, ...]:
    return tuple(float(v) for v in np.linspace(0.05, 0.2, 16))


@dataclasses.dataclass(frozen=True)
class SweepGrid:
    tau_rho_values: tuple[float, ...] = dataclasses.field(default_factory=_default_tau_rho)
    tau_ag_values: tuple[float, ...] = dataclasses.field(default_factory=_default_tau_ag)
    kappa_values: tuple[tuple[float, float], ...] = ((0.0, 0.0), (0.02, 0.02), (0.05, 0.05))

    def __post_init__(self):
        object.__setattr__(self, "tau_rho_values", tuple(float(v) for v in self.tau_rho_values))
        object.__setattr__(self, "tau_ag_values", tuple(float(v) for v in self.tau_ag_values))
        object.__setattr__(self, "kappa_values", tuple((float(a), float(b)) for a, b in self.kappa_values))
        for name in ("tau_rho_values", "tau_ag_values"):
            vals = getattr(self, name)
            if not vals:
                raise ValueError(f"{name} must not be empty")
            if any(not (math.isfinite(v) and v > 0) for v in vals):
                raise ValueError(f"{name} must all be positive and finite")
        if not self.kappa_values:
            raise ValueError("kappa_values must not be empty")
        for k1, k2 in self.kappa_values:
            if k1 < 0 or k2 < 0 or k1 + k2 >= 1:
                raise ValueError(f"kappa pair ({k1}, {k2}) must be nonnegative with sum < 1")

    def cells(self) -> list[tuple[float, float, float, float]]:
        """Cells ``(tau_rho, tau_ag, kappa1, kappa2)`` sorted by kappa, then tau_rho, then tau_ag."""
        cells = [
            (tr, ta, k1, k2)
            for (k1, k2) in sorted(set(self.kappa_values))
            for tr in sorted(set(self.tau_rho_values))
            for ta in sorted(set(self.tau_ag_values))
        ]
        return cells

    def to_dict(self) -> dict:
        return {
            "tau_rho_values": list(self.tau_rho_values),
            "tau_ag_values": list(self.tau_ag_values),
            "kappa_values": [list(p) for p in self.kappa_values],
        }


def with_parameters(scenario: MarketScenario, tau_rho: float, tau_ag: float, kappa1: float, kappa2: float) -> MarketScenario:
    """Copy of ``scenario`` with one price time constant, one demand time constant and one curtailment pair for everyone."""
    scs = tuple(dataclasses.replace(sc, tau_rho=tau_rho) for sc in scenario.scs)
    customers = tuple(
        dataclasses.replace(c, tau_ag=tau_ag, kappa1=kappa1, kappa2=kappa2) for c in scenario.customers
    )
    return check_scenario(MarketScenario(scs=scs, customers=customers))


def analyze_cell(scenario: MarketScenario, cell: Sequence[float]) -> dict:
    tr, ta, k1, k2 = cell
    variant = with_parameters(scenario, tr, ta, k1, k2)
    ok, max_real = hurwitz_check(assemble_linearization(variant))
    return {"tau_rho": tr, "tau_ag": ta, "kappa1": k1, "kappa2": k2, "max_real_eig": max_real, "is_hurwitz": ok}


def _analyze_chunk(args) -> list[dict]:
    scenario, cells = args
    return [analyze_cell(scenario, c) for c in cells]


def _chunks(items: list, n: int) -> Iterable[list]:
    size = max(1, math.ceil(len(items) / n))
    for k in range(0, len(items), size):
        yield items[k:k + size]


def stability_map(scenario: MarketScenario, grid: Optional[SweepGrid] = None, jobs: int = 1) -> list[dict]:
    """One row per grid cell, in grid order regardless of ``jobs``."""
    grid = grid or SweepGrid()
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    cells = grid.cells()
    if jobs == 1 or len(cells) < 2:
        return [analyze_cell(scenario, c) for c in cells]
    work = [(scenario, chunk) for chunk in _chunks(cells, jobs * 4)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_analyze_chunk, work))
    return [row for part in parts for row in part]
