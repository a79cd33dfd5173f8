"""Linearised stability analysis of the gradient-play flow.

The flow is affine in the market state, so its Jacobian ``A1`` is exact.
This module assembles it, checks the Hurwitz property, solves the Lyapunov
equation, and evaluates the region-of-attraction radius and the robustness
condition under supply and curtailment perturbations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import PerturbationSpec, TrajectoryRecord, rhs_vectors
from .model import MarketError, MarketScenario, MarketState, StateLayout

LYAPUNOV_RESIDUAL_TOL = 1e-8


class NotHurwitzError(MarketError):
    """Raised when a Lyapunov solve is requested for a matrix that is not Hurwitz."""


class PerturbationBoundError(MarketError):
    """Raised when a perturbation's actual matrix norm exceeds its declared bound."""


@dataclass(frozen=True)
class LinearizedSystem:
    a1: np.ndarray
    a2: np.ndarray
    constant: np.ndarray
    ordering: tuple[str, ...]
    capacity: Optional[np.ndarray] = None

    def rhs(self, x1: np.ndarray, x2: Optional[np.ndarray] = None) -> np.ndarray:
        out = self.a1 @ x1 + self.constant
        if x2 is not None and self.a2.size:
            out = out + self.a2 @ x2
        return out


@dataclass(frozen=True)
class StabilityReport:
    """Outcome of :func:`analyze`.

    When the system is not Hurwitz, every Lyapunov-derived field is ``None``
    and ``lyapunov_available`` is False. ``d = inf`` means capacity dynamics
    are off, so the certified region is the whole state space.
    """

    eigenvalues: np.ndarray
    max_real_part: float
    is_hurwitz: bool
    lyapunov_available: bool
    p1: Optional[np.ndarray] = None
    p2: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    beta_bound: Optional[float] = None
    psi_min: Optional[float] = None
    d: Optional[float] = None
    d_delta: Optional[float] = None
    lambda_min_q: Optional[float] = None
    lambda_min_p2: Optional[float] = None
    perturbation_condition_ok: Optional[bool] = None

    def summary(self) -> dict:
        """JSON-friendly scalar view; non-finite numbers become strings."""

        def num(v):
            if v is None:
                return None
            v = float(v)
            return v if math.isfinite(v) else repr(v)

        return {
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "max_real_part": float(self.max_real_part),
            "is_hurwitz": bool(self.is_hurwitz),
            "lyapunov_available": bool(self.lyapunov_available),
            "beta_bound": num(self.beta_bound),
            "psi_min": num(self.psi_min),
            "d": num(self.d),
            "d_delta": num(self.d_delta),
            "lambda_min_q": num(self.lambda_min_q),
            "lambda_min_p2": num(self.lambda_min_p2),
            "perturbation_condition_ok": self.perturbation_condition_ok,
        }


def _jacobian(layout: StateLayout, supply_factor: np.ndarray, eff: np.ndarray) -> np.ndarray:
    ns, nd = layout.n_supply, layout.n_demand
    q_idx = np.arange(ns)
    d_idx = ns + np.arange(nd)
    p_idx = ns + nd + np.arange(layout.n_sc)
    a = np.zeros((layout.size, layout.size))
    a[q_idx, q_idx] = -supply_factor * layout.supply_beta / layout.supply_tau
    a[q_idx, p_idx[layout.supply_sc]] = 1.0 / layout.supply_tau
    a[d_idx, d_idx] = layout.demand_beta / layout.demand_tau
    a[d_idx, p_idx[layout.demand_sc]] = -1.0 / layout.demand_tau
    a[p_idx[layout.supply_sc], q_idx] = -supply_factor / layout.tau_rho[layout.supply_sc]
    a[p_idx[layout.demand_sc], d_idx] = eff / layout.tau_rho[layout.demand_sc]
    return a


def _factors(scenario: MarketScenario, perturbation: Optional[PerturbationSpec]) -> np.ndarray:
    layout = scenario.layout
    if perturbation is None:
        return np.ones(layout.n_supply)
    return perturbation.factor_vector(layout)


def assemble_linearization(
    scenario: MarketScenario,
    perturbation: Optional[PerturbationSpec] = None,
    capacity: bool = False,
) -> LinearizedSystem:
    """Exact Jacobian and affine constant of the flow, plus multiplier coupling when ``capacity``."""
    layout = scenario.layout
    factor = _factors(scenario, perturbation)
    a1 = _jacobian(layout, factor, layout.demand_eff)
    constant, _ = rhs_vectors(np.zeros(layout.size), np.zeros(0), layout, factor)
    if capacity:
        a2 = np.zeros((layout.size, layout.n_sc))
        a2[np.arange(layout.n_supply), layout.supply_sc] = -1.0 / layout.supply_tau
        cap = layout.capacity_matrix()
    else:
        a2 = np.zeros((layout.size, 0))
        cap = None
    return LinearizedSystem(a1=a1, a2=a2, constant=constant, ordering=tuple(layout.labels), capacity=cap)


def perturbation_matrices(scenario: MarketScenario, perturbation: Optional[PerturbationSpec]) -> tuple[np.ndarray, np.ndarray]:
    """Split the perturbed Jacobian as ``A1_nominal + delta_sc - delta_c``.

    ``delta_sc`` collects the change due to supply factors; ``delta_c`` holds
    the curtailment share ``(kappa1 + kappa2) / tau_rho`` in the price rows.
    """
    layout = scenario.layout
    ones = np.ones(layout.n_supply)
    full = np.ones(layout.n_demand)
    nominal = _jacobian(layout, ones, full)
    supply = _jacobian(layout, _factors(scenario, perturbation), full)
    curtailed = _jacobian(layout, ones, layout.demand_eff)
    return supply - nominal, nominal - curtailed


def check_perturbation_bounds(scenario: MarketScenario, perturbation: PerturbationSpec, rtol: float = 1e-12) -> tuple[float, float]:
    """Actual spectral norms of the two perturbation matrices; raise if a declared bound is exceeded."""
    dsc, dc = perturbation_matrices(scenario, perturbation)
    nsc = float(np.linalg.norm(dsc, 2)) if dsc.size else 0.0
    nc = float(np.linalg.norm(dc, 2)) if dc.size else 0.0
    for name, actual, bound in (("pi_sc", nsc, perturbation.pi_sc), ("pi_c", nc, perturbation.pi_c)):
        if actual > bound * (1 + rtol) + rtol:
            raise PerturbationBoundError(f"{name}={bound} is below the actual spectral norm {actual}")
    return nsc, nc


def tight_perturbation(scenario: MarketScenario, supply_factors=None) -> PerturbationSpec:
    """Perturbation whose declared bounds equal the actual norms."""
    probe = PerturbationSpec(dict(supply_factors or {}))
    dsc, dc = perturbation_matrices(scenario, probe)
    return PerturbationSpec(
        dict(supply_factors or {}),
        pi_sc=float(np.linalg.norm(dsc, 2)) if dsc.size else 0.0,
        pi_c=float(np.linalg.norm(dc, 2)) if dc.size else 0.0,
    )


def eigenvalues(matrix) -> np.ndarray:
    """All eigenvalues (with multiplicity), sorted by real then imaginary part."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if a.size == 0:
        return np.zeros(0, dtype=complex)
    w = np.linalg.eigvals(a).astype(complex)
    return w[np.lexsort((w.imag, w.real))]


def hurwitz_check(system) -> tuple[bool, float]:
    a = system.a1 if isinstance(system, LinearizedSystem) else np.asarray(system, dtype=float)
    w = eigenvalues(a)
    max_real = float(w.real.max()) if w.size else -math.inf
    return bool(max_real < 0), max_real


def solve_lyapunov(a, q) -> np.ndarray:
    """Solve ``A^T P + P A = -Q`` for a Hurwitz ``A`` through the Kronecker-vectorised system."""
    a = np.asarray(a, dtype=float)
    q = np.asarray(q, dtype=float)
    n = a.shape[0]
    if q.shape != (n, n):
        raise ValueError(f"q has shape {q.shape}, expected {(n, n)}")
    if not np.allclose(q, q.T, rtol=0, atol=1e-12):
        raise ValueError("q must be symmetric")
    ok, max_real = hurwitz_check(a)
    if not ok:
        raise NotHurwitzError(f"matrix is not Hurwitz (max real part {max_real}); no positive definite solution")
    eye = np.eye(n)
    # row-major vec: vec(A^T P) = (A^T kron I) vec(P), vec(P A) = (I kron A^T) vec(P)
    k = np.kron(a.T, eye) + np.kron(eye, a.T)
    p = np.linalg.solve(k, -q.reshape(-1)).reshape(n, n)
    p = 0.5 * (p + p.T)
    resid = np.abs(a.T @ p + p @ a + q).max()
    if resid > LYAPUNOV_RESIDUAL_TOL * max(1.0, np.abs(q).max()):
        raise NotHurwitzError(f"Lyapunov residual {resid:.3g} exceeds tolerance")
    return p


def lyapunov_value(y1, y2, p1, p2) -> float:
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    v = float(y1 @ np.asarray(p1) @ y1)
    if y2.size:
        v += float(y2 @ np.asarray(p2) @ y2)
    return v


def _lambda_min(m) -> float:
    m = np.asarray(m, dtype=float)
    return float(np.linalg.eigvalsh(m).min()) if m.size else math.nan


def attraction_radius(p2, psi_min: float, q, beta_bound: float) -> float:
    """Radius ``2 lambda_min(P2) psi_min lambda_min(Q) / beta^2``; ``beta = 0`` gives ``inf``."""
    num = 2.0 * _lambda_min(p2) * psi_min * _lambda_min(q)
    if beta_bound == 0:
        return math.inf if num > 0 else 0.0
    return num / beta_bound**2


def psi_coefficients(vm_max, p2) -> tuple[np.ndarray, float]:
    """Coordinates of the capacity vector in an orthonormal eigenbasis of ``P2``.

    Basis vectors are sign-flipped so that each coordinate is nonnegative.
    """
    vm_max = np.asarray(vm_max, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if vm_max.size == 0:
        return np.zeros(0), math.nan
    _, basis = np.linalg.eigh(p2)
    psi = basis.T @ vm_max
    psi = np.abs(psi)
    return psi, float(psi.min())


def psi_basis(vm_max, p2) -> np.ndarray:
    """Sign-normalised eigenbasis matching :func:`psi_coefficients` (columns)."""
    vm_max = np.asarray(vm_max, dtype=float)
    _, basis = np.linalg.eigh(np.asarray(p2, dtype=float))
    signs = np.where(basis.T @ vm_max < 0, -1.0, 1.0)
    return basis * signs


def beta_coupling_bound(p1, a2, p2, capacity=None) -> float:
    """Spectral norm of ``P1 A2 + C^T P2``; 0 when there are no multipliers."""
    a2 = np.asarray(a2, dtype=float)
    if a2.size == 0:
        return 0.0
    m = np.asarray(p1, dtype=float) @ a2
    if capacity is not None:
        m = m + np.asarray(capacity, dtype=float).T @ np.asarray(p2, dtype=float)
    return float(np.linalg.norm(m, 2))


def radius_shifts(bounds: PerturbationSpec, p1, p2, psi_min: float, beta_bound: float) -> tuple[float, float]:
    """The supply and curtailment corrections to the attraction radius."""
    if bounds.pi_sc == 0 and bounds.pi_c == 0:
        return 0.0, 0.0
    if beta_bound == 0:
        return 0.0, 0.0
    scale = 4.0 * _lambda_min(p2) * psi_min * float(np.linalg.norm(p1, 2)) / beta_bound**2
    return scale * bounds.pi_sc, scale * bounds.pi_c


def perturbed_radius(d: float, bounds: PerturbationSpec, p1, p2, psi_min: float, beta_bound: float) -> float:
    d_sc, d_c = radius_shifts(bounds, p1, p2, psi_min, beta_bound)
    return d - d_sc + d_c


def perturbation_condition(bounds: PerturbationSpec, p1, q) -> bool:
    return bool(bounds.pi_sc - bounds.pi_c < _lambda_min(q) / (2.0 * float(np.linalg.norm(p1, 2))))


def analyze(
    scenario: MarketScenario,
    perturbation: Optional[PerturbationSpec] = None,
    p2=None,
    q=None,
    capacity: bool = False,
) -> StabilityReport:
    """Full stability report for one scenario (optionally perturbed, optionally with capacity dynamics)."""
    if perturbation is not None:
        check_perturbation_bounds(scenario, perturbation)
    system = assemble_linearization(scenario, perturbation, capacity=capacity)
    w = eigenvalues(system.a1)
    ok, max_real = hurwitz_check(system)
    if not ok:
        return StabilityReport(eigenvalues=w, max_real_part=max_real, is_hurwitz=False, lyapunov_available=False)

    layout = scenario.layout
    n = layout.size
    q = np.eye(n) if q is None else np.asarray(q, dtype=float)
    p1 = solve_lyapunov(system.a1, q)
    bounds = perturbation or PerturbationSpec()
    if capacity:
        p2 = np.eye(layout.n_sc) if p2 is None else np.asarray(p2, dtype=float)
        if not np.allclose(p2, np.diag(np.diag(p2))) or np.any(np.diag(p2) <= 0):
            raise ValueError("p2 must be diagonal with positive entries")
        _, psi_min = psi_coefficients(layout.vm_max_sc, p2)
        beta = beta_coupling_bound(p1, system.a2, p2, system.capacity)
        d = attraction_radius(p2, psi_min, q, beta)
        d_delta = perturbed_radius(d, bounds, p1, p2, psi_min, beta)
        lam_p2 = _lambda_min(p2)
    else:
        p2 = np.zeros((0, 0))
        psi_min, beta, d, d_delta, lam_p2 = math.nan, 0.0, math.inf, math.inf, math.nan
    return StabilityReport(
        eigenvalues=w,
        max_real_part=max_real,
        is_hurwitz=True,
        lyapunov_available=True,
        p1=p1,
        p2=p2,
        q=q,
        beta_bound=beta,
        psi_min=psi_min,
        d=d,
        d_delta=d_delta,
        lambda_min_q=_lambda_min(q),
        lambda_min_p2=lam_p2,
        perturbation_condition_ok=perturbation_condition(bounds, p1, q),
    )


def verify_lyapunov_decrease(
    trajectory: TrajectoryRecord,
    equilibrium: MarketState,
    p1,
    p2=None,
    multipliers_eq=None,
    rtol: float = 1e-6,
) -> tuple[bool, float]:
    """Check that the Lyapunov function never rises by more than ``rtol * V(0)`` between samples."""
    layout = trajectory.layout
    x_eq = equilibrium.to_vector(layout)
    y1 = trajectory.x1 - x_eq
    v = np.einsum("ti,ij,tj->t", y1, np.asarray(p1, dtype=float), y1)
    if trajectory.x2.shape[1]:
        mu_eq = np.zeros(trajectory.x2.shape[1]) if multipliers_eq is None else np.asarray(multipliers_eq, float)
        p2 = np.eye(mu_eq.size) if p2 is None else np.asarray(p2, dtype=float)
        y2 = trajectory.x2 - mu_eq
        v = v + np.einsum("ti,ij,tj->t", y2, p2, y2)
    if v.size < 2:
        return True, 0.0
    rises = np.diff(v)
    worst = float(max(rises.max(), 0.0))
    return bool(worst <= rtol * v[0]), worst
