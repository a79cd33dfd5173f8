"""Static socially-optimal market equilibrium.

Three routes to the same KKT point: an exact per-SC scalar solve, a
price-adjustment (tatonnement) iteration on best responses, and a damped
primal-dual iteration on the full KKT system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import scipy.linalg

from ._piecewise import breakpoints, clipped_response, linear_roots
from .model import (
    CustomerParams,
    DegenerateScenarioError,
    InfeasibleError,
    MarketScenario,
    MarketState,
    StateLayout,
    check_scenario,
)

DIVERGENCE_THRESHOLD = 1e12
METHODS = ("closed_form", "tatonnement", "interior_point")


@dataclass(frozen=True)
class SolverOptions:
    """Knobs shared by the equilibrium solvers.

    ``tolerance=None`` picks the method default: 1e-9 for the closed-form
    residual check, 1e-6 for the iterative methods. ``direction`` only
    affects :func:`interior_point_iterate`.
    """

    tolerance: Optional[float] = None
    max_iterations: int = 1_000_000
    step_scale: float = 0.01
    enforce_bounds: bool = False
    direction: str = "newton"
    initial_prices: Optional[Mapping[str, float]] = None
    initial_state: Optional[MarketState] = None

    def __post_init__(self):
        if self.tolerance is not None and not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not self.step_scale > 0:
            raise ValueError("step_scale must be > 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.direction not in ("newton", "gradient"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def tol(self, method: str) -> float:
        if self.tolerance is not None:
            return self.tolerance
        return 1e-9 if method == "closed_form" else 1e-6


@dataclass(frozen=True)
class EquilibriumResult:
    state: MarketState
    method: str
    iterations: int
    kkt_residual: float
    converged: bool
    status: str = "converged"
    warnings: tuple[str, ...] = field(default_factory=tuple)


# -- best responses and residuals -------------------------------------------------


def supply_response(layout: StateLayout, rho: np.ndarray, enforce_bounds: bool = False) -> np.ndarray:
    p = rho[layout.supply_sc]
    q = (p - layout.supply_alpha) / layout.supply_beta
    return np.clip(q, layout.supply_lo, layout.supply_hi) if enforce_bounds else q


def demand_response(layout: StateLayout, rho: np.ndarray, enforce_bounds: bool = False) -> np.ndarray:
    p = rho[layout.demand_sc]
    d = (p - layout.demand_alpha) / layout.demand_beta
    return np.clip(d, layout.demand_lo, layout.demand_hi) if enforce_bounds else d


def excess_demand(layout: StateLayout, q: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Per-SC effective demand minus committed supply."""
    dem = np.bincount(layout.demand_sc, weights=d * layout.demand_eff, minlength=layout.n_sc)
    sup = np.bincount(layout.supply_sc, weights=q, minlength=layout.n_sc)
    return dem - sup


def balance_slope(layout: StateLayout) -> np.ndarray:
    """d(excess demand)/d(rho) per SC with unclamped best responses."""
    dem = np.bincount(layout.demand_sc, weights=layout.demand_eff / layout.demand_beta, minlength=layout.n_sc)
    sup = np.bincount(layout.supply_sc, weights=1.0 / layout.supply_beta, minlength=layout.n_sc)
    return dem - sup


def kkt_residual_vector(x: np.ndarray, layout: StateLayout, enforce_bounds: bool = False) -> float:
    q, d, rho = layout.split(np.asarray(x, dtype=float))
    if enforce_bounds:
        # distance to the clamped best response, in marginal (price) units
        r_q = np.abs(layout.supply_beta) * np.abs(q - supply_response(layout, rho, True))
        r_d = np.abs(layout.demand_beta) * np.abs(d - demand_response(layout, rho, True))
    else:
        r_q = np.abs(layout.supply_alpha + layout.supply_beta * q - rho[layout.supply_sc])
        r_d = np.abs(layout.demand_alpha + layout.demand_beta * d - rho[layout.demand_sc])
    r_b = np.abs(excess_demand(layout, q, d))
    return float(max(r_q.max(initial=0.0), r_d.max(initial=0.0), r_b.max(initial=0.0)))


def kkt_residual(state: MarketState, scenario: MarketScenario, enforce_bounds: bool = False) -> float:
    """Max-norm of the stationarity and market-clearing equations at ``state``."""
    layout = scenario.layout
    return kkt_residual_vector(state.to_vector(layout), layout, enforce_bounds)


def _warnings(x: np.ndarray, layout: StateLayout) -> tuple[str, ...]:
    q, d, rho = layout.split(x)
    out = []
    for key, p in zip(layout.price_keys, rho):
        if p < 0:
            out.append(f"negative price at {key}: {p:.6g}")
    eps = 1e-9
    for (sc, ch), v, lo, hi in zip(layout.supply_keys, q, layout.supply_lo, layout.supply_hi):
        if v < lo - eps or v > hi + eps:
            out.append(f"supply {sc}/{ch} = {v:.6g} outside [{lo:g}, {hi:g}]")
    for cid, v, lo, hi in zip(layout.demand_keys, d, layout.demand_lo, layout.demand_hi):
        if v < lo - eps or v > hi + eps:
            out.append(f"demand {cid} = {v:.6g} outside [{lo:g}, {hi:g}]")
    return tuple(out)


# -- closed form --------------------------------------------------------------------


def _bounded_prices(layout: StateLayout, reference: np.ndarray) -> tuple[np.ndarray, list[str]]:
    notes = []
    rho = np.empty(layout.n_sc)
    for i in range(layout.n_sc):
        s = layout.supply_sc == i
        c = layout.demand_sc == i
        sa, sb, slo, shi = layout.supply_alpha[s], layout.supply_beta[s], layout.supply_lo[s], layout.supply_hi[s]
        ca, cb, clo, chi = layout.demand_alpha[c], layout.demand_beta[c], layout.demand_lo[c], layout.demand_hi[c]
        eff = layout.demand_eff[c]

        def excess(p):
            return float(eff @ clipped_response(p, ca, cb, clo, chi) - clipped_response(p, sa, sb, slo, shi).sum())

        pts = np.concatenate([breakpoints(sa, sb, slo, shi), breakpoints(ca, cb, clo, chi)])
        roots = linear_roots(excess, pts)
        if not roots:
            raise InfeasibleError(f"no clearing price for {layout.price_keys[i]} within the box bounds")
        if len(roots) > 1:
            notes.append(f"{len(roots)} clearing prices for {layout.price_keys[i]}; kept the one nearest the unbounded price")
        rho[i] = min(roots, key=lambda r: (abs(r - reference[i]), r))
    return rho, notes


def solve_kkt_closed_form(scenario: MarketScenario, options: Optional[SolverOptions] = None) -> EquilibriumResult:
    """Solve the KKT system exactly, one scalar price equation per SC.

    Stationarity gives each quantity as an affine function of its SC's price;
    substituting into the clearing equation leaves ``slope * rho = intercept``.
    """
    options = options or SolverOptions()
    check_scenario(scenario)
    layout = scenario.layout
    slope = balance_slope(layout)
    intercept = np.bincount(
        layout.demand_sc, weights=layout.demand_eff * layout.demand_alpha / layout.demand_beta, minlength=layout.n_sc
    ) - np.bincount(layout.supply_sc, weights=layout.supply_alpha / layout.supply_beta, minlength=layout.n_sc)
    scale = np.bincount(layout.supply_sc, weights=np.abs(1.0 / layout.supply_beta), minlength=layout.n_sc)
    bad = np.abs(slope) <= 1e-12 * scale
    if bad.any():
        names = [k for k, b in zip(layout.price_keys, bad) if b]
        raise DegenerateScenarioError(f"price coefficient cancels for {names}; clearing equation has no unique root")
    rho = intercept / slope
    notes: list[str] = []
    if options.enforce_bounds:
        rho, notes = _bounded_prices(layout, rho)
    q = supply_response(layout, rho, options.enforce_bounds)
    d = demand_response(layout, rho, options.enforce_bounds)
    x = np.concatenate([q, d, rho])
    res = kkt_residual_vector(x, layout, options.enforce_bounds)
    tol = options.tol("closed_form")
    ok = res <= tol
    return EquilibriumResult(
        state=MarketState.from_vector(layout, x),
        method="closed_form",
        iterations=0,
        kkt_residual=res,
        converged=bool(ok),
        status="converged" if ok else "residual_above_tolerance",
        warnings=tuple(notes) + _warnings(x, layout),
    )


def job_type_split(customer: CustomerParams, rho: float) -> dict[str, float]:
    """Per-job-type demands at price ``rho``: each type's marginal utility equals the price."""
    out = {}
    for name in ("e", "c", "s"):
        coeffs = getattr(customer, f"coeffs_{name}")
        if coeffs is not None:
            out[name] = (rho - coeffs.alpha) / coeffs.beta
    return out


# -- iterative methods --------------------------------------------------------------


def _finish(layout, x, method, it, tol, enforce, status):
    res = kkt_residual_vector(x, layout, enforce)
    return EquilibriumResult(
        state=MarketState.from_vector(layout, x),
        method=method,
        iterations=it,
        kkt_residual=res,
        converged=status == "converged",
        status=status,
        warnings=_warnings(x, layout) if np.all(np.isfinite(x)) else ("non-finite state",),
    )


def _exact_residual(layout: StateLayout, rho: np.ndarray, enforce: bool) -> float:
    q = supply_response(layout, rho, enforce)
    d = demand_response(layout, rho, enforce)
    return kkt_residual_vector(np.concatenate([q, d, rho]), layout, enforce)


def tatonnement(scenario: MarketScenario, options: Optional[SolverOptions] = None) -> EquilibriumResult:
    """Price adjustment on excess demand with best-response quantities.

    Each SC moves its price by ``step_scale`` times its excess demand, in the
    direction that shrinks the excess. With concave costs supply falls as the
    price rises, so the right direction depends on the sign of the aggregate
    response slope rather than being fixed.
    """
    options = options or SolverOptions()
    check_scenario(scenario)
    layout = scenario.layout
    tol = options.tol("tatonnement")
    enforce = options.enforce_bounds
    slope = balance_slope(layout)
    if np.any(slope == 0):
        raise DegenerateScenarioError("zero aggregate price response; tatonnement has no direction")
    direction = -np.sign(slope)
    if options.initial_prices is not None:
        rho = np.array([options.initial_prices[k] for k in layout.price_keys], dtype=float)
    else:
        first = {}
        for (sc, _), a in zip(layout.supply_keys, layout.supply_alpha):
            first.setdefault(sc, a)
        rho = np.array([first[k] for k in layout.price_keys], dtype=float)

    h = options.step_scale
    status = "max_iterations"
    it = 0
    if not enforce:
        # unclamped best responses make excess demand affine in the price
        offset = excess_demand(layout, supply_response(layout, np.zeros_like(rho)), demand_response(layout, np.zeros_like(rho)))
    while True:
        if enforce:
            excess = excess_demand(layout, supply_response(layout, rho, True), demand_response(layout, rho, True))
        else:
            excess = slope * rho + offset
        # best responses satisfy stationarity exactly, so the residual is the excess
        res = float(np.abs(excess).max(initial=0.0))
        if not math.isfinite(res) or res > DIVERGENCE_THRESHOLD:
            status = "diverged"
            break
        if res <= tol and _exact_residual(layout, rho, enforce) <= tol:
            status = "converged"
            break
        if it >= options.max_iterations:
            break
        rho = rho + h * direction * excess
        it += 1
    q = supply_response(layout, rho, enforce)
    d = demand_response(layout, rho, enforce)
    x = np.concatenate([q, d, rho])
    return _finish(layout, x, "tatonnement", it, tol, enforce, status)


def kkt_system(layout: StateLayout) -> tuple[np.ndarray, np.ndarray]:
    """KKT equations as ``J @ x + k = F(x)`` with rows (supply, demand, balance).

    Supply rows are the cost gradients ``alpha + beta q - rho``, demand rows the
    negated utility gradients ``rho - alpha - beta d``, balance rows the excess
    effective demand. These are the Lagrangian gradients of the welfare program.
    """
    n = layout.size
    ns, nd = layout.n_supply, layout.n_demand
    jac = np.zeros((n, n))
    k = np.zeros(n)
    s_idx = np.arange(ns)
    d_idx = ns + np.arange(nd)
    p_off = ns + nd
    jac[s_idx, s_idx] = layout.supply_beta
    jac[s_idx, p_off + layout.supply_sc] = -1.0
    k[s_idx] = layout.supply_alpha
    jac[d_idx, d_idx] = -layout.demand_beta
    jac[d_idx, p_off + layout.demand_sc] = 1.0
    k[d_idx] = -layout.demand_alpha
    jac[p_off + layout.supply_sc, s_idx] = -1.0
    jac[p_off + layout.demand_sc, d_idx] = layout.demand_eff
    return jac, k


def interior_point_iterate(scenario: MarketScenario, options: Optional[SolverOptions] = None) -> EquilibriumResult:
    """Damped primal-dual iteration on the KKT system.

    ``direction="newton"`` (default) steps ``x <- x - k J^{-1} F(x)``, the
    primal-dual Newton direction; the error contracts by ``1 - k`` per step.
    ``direction="gradient"`` is the plain Lagrangian update: descend in the
    quantities, ascend in the prices. Because costs are concave in supply the
    Lagrangian is not convex in the quantities and the gradient variant
    diverges on many scenarios; it is kept for comparison.
    """
    options = options or SolverOptions()
    check_scenario(scenario)
    layout = scenario.layout
    tol = options.tol("interior_point")
    enforce = options.enforce_bounds
    jac, const = kkt_system(layout)
    x = (
        options.initial_state.to_vector(layout)
        if options.initial_state is not None
        else np.zeros(layout.size)
    )
    k = options.step_scale
    nq = layout.n_supply + layout.n_demand
    lo = np.concatenate([layout.supply_lo, layout.demand_lo])
    hi = np.concatenate([layout.supply_hi, layout.demand_hi])
    if options.direction == "newton":
        try:
            lu = scipy.linalg.lu_factor(jac, check_finite=True)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise DegenerateScenarioError("singular KKT matrix") from exc
        if np.any(np.abs(np.diag(lu[0])) <= 1e-14 * np.abs(jac).max()):
            raise DegenerateScenarioError("singular KKT matrix")
        # the system is affine, so the Newton step -J^{-1} F(x) is simply target - x
        target = scipy.linalg.lu_solve(lu, -const)
    # sign pattern turning Lagrangian gradients into the update direction
    sign = np.concatenate([-np.ones(nq), np.ones(layout.n_sc)])

    status = "max_iterations"
    it = 0
    while True:
        grad = jac @ x + const
        # without bounds the KKT residual equals the largest gradient entry up to rounding
        res = kkt_residual_vector(x, layout, True) if enforce else float(np.abs(grad).max(initial=0.0))
        if not math.isfinite(res) or res > DIVERGENCE_THRESHOLD:
            status = "diverged"
            break
        if res <= tol and kkt_residual_vector(x, layout, enforce) <= tol:
            status = "converged"
            break
        if it >= options.max_iterations:
            break
        if options.direction == "newton":
            step = target - x
        else:
            step = sign * grad
        x = x + k * step
        if enforce:
            x[:nq] = np.clip(x[:nq], lo, hi)
        it += 1
    return _finish(layout, x, "interior_point", it, tol, enforce, status)


def solve(scenario: MarketScenario, method: str = "closed_form", options: Optional[SolverOptions] = None) -> EquilibriumResult:
    if method == "closed_form":
        return solve_kkt_closed_form(scenario, options)
    if method == "tatonnement":
        return tatonnement(scenario, options)
    if method == "interior_point":
        return interior_point_iterate(scenario, options)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
