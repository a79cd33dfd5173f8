"""Estimator-style wrappers around the solvers.

Each wrapper takes its knobs as constructor parameters (so ``get_params`` and
``set_params`` work), learns from a scenario in ``fit`` and exposes the
result through trailing-underscore attributes and ``transform``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import dynamics, equilibrium, stability, welfare
from ._validation import (
    check_choice,
    check_nonnegative,
    check_positive,
    check_scenario_input,
)


class MarketEquilibrium(TransformerMixin, BaseEstimator):
    """Static equilibrium of a scenario.

    ``transform`` returns the equilibrium state vector (supplies, demands,
    prices) in the scenario layout order; ``predict`` returns the prices.
    """

    def __init__(self, method="closed_form", tolerance=None, max_iterations=1_000_000,
                 step_scale=0.01, enforce_bounds=False, direction="newton"):
        self.method = method
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.step_scale = step_scale
        self.enforce_bounds = enforce_bounds
        self.direction = direction

    def _options(self):
        check_choice("method", self.method, equilibrium.METHODS)
        check_positive("tolerance", self.tolerance, allow_none=True)
        check_positive("step_scale", self.step_scale)
        return equilibrium.SolverOptions(
            tolerance=self.tolerance,
            max_iterations=int(self.max_iterations),
            step_scale=self.step_scale,
            enforce_bounds=bool(self.enforce_bounds),
            direction=self.direction,
        )

    def fit(self, X, y=None):
        scenario = check_scenario_input(X)
        self.result_ = equilibrium.solve(scenario, self.method, self._options())
        self.scenario_ = scenario
        self.state_ = self.result_.state
        self.n_iter_ = self.result_.iterations
        self.converged_ = self.result_.converged
        self.kkt_residual_ = self.result_.kkt_residual
        self.feature_names_out_ = np.array(scenario.layout.labels, dtype=object)
        return self

    def _result_for(self, X):
        check_is_fitted(self, "result_")
        scenario = check_scenario_input(X)
        if scenario == self.scenario_:
            return scenario, self.result_
        return scenario, equilibrium.solve(scenario, self.method, self._options())

    def transform(self, X):
        scenario, res = self._result_for(X)
        return res.state.to_vector(scenario.layout)

    def predict(self, X):
        scenario, res = self._result_for(X)
        return np.array([res.state.rho[k] for k in scenario.layout.price_keys])

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "feature_names_out_")
        return self.feature_names_out_


class GradientPlaySimulator(BaseEstimator):
    """Trajectory of the gradient-play flow from a seeded perturbation of the equilibrium."""

    def __init__(self, t_end=10.0, dt=1e-3, method="rk4", perturb=0.01, seed=0,
                 record_every=1, capacity=False, stop_on_convergence=True):
        self.t_end = t_end
        self.dt = dt
        self.method = method
        self.perturb = perturb
        self.seed = seed
        self.record_every = record_every
        self.capacity = capacity
        self.stop_on_convergence = stop_on_convergence

    def fit(self, X, y=None):
        check_positive("t_end", self.t_end)
        check_positive("dt", self.dt)
        check_nonnegative("perturb", self.perturb)
        check_choice("method", self.method, tuple(dynamics.STEPPERS))
        scenario = check_scenario_input(X)
        layout = scenario.layout
        self.equilibrium_ = equilibrium.solve_kkt_closed_form(scenario).state
        start = dynamics.DynamicState.at(self.equilibrium_, layout, capacity=self.capacity)
        start = dynamics.perturb_state(start, self.perturb, self.seed, layout)
        self.trajectory_ = dynamics.integrate(
            scenario, start, self.t_end, self.dt, self.method,
            record_every=self.record_every, stop_on_convergence=self.stop_on_convergence,
        )
        self.terminal_status_ = self.trajectory_.terminal_status
        self.final_error_ = float(np.abs(self.trajectory_.x1[-1] - self.equilibrium_.to_vector(layout)).max())
        return self

    def transform(self, X=None):
        check_is_fitted(self, "trajectory_")
        return np.hstack([self.trajectory_.x1, self.trajectory_.x2])


class StabilityAnalyzer(BaseEstimator):
    """Hurwitz test, Lyapunov certificate and attraction radii of the linearised flow."""

    def __init__(self, capacity=False, q=None, p2=None, supply_factors=None, pi_sc=None, pi_c=None):
        self.capacity = capacity
        self.q = q
        self.p2 = p2
        self.supply_factors = supply_factors
        self.pi_sc = pi_sc
        self.pi_c = pi_c

    def fit(self, X, y=None):
        scenario = check_scenario_input(X)
        pert = None
        if self.supply_factors or self.pi_sc is not None or self.pi_c is not None:
            tight = stability.tight_perturbation(scenario, self.supply_factors)
            pert = dynamics.PerturbationSpec(
                dict(self.supply_factors or {}),
                pi_sc=tight.pi_sc if self.pi_sc is None else self.pi_sc,
                pi_c=tight.pi_c if self.pi_c is None else self.pi_c,
            )
        self.report_ = stability.analyze(scenario, pert, p2=self.p2, q=self.q, capacity=self.capacity)
        self.is_hurwitz_ = self.report_.is_hurwitz
        self.max_real_part_ = self.report_.max_real_part
        return self

    def transform(self, X=None):
        check_is_fitted(self, "report_")
        return self.report_.eigenvalues

    def predict(self, X=None):
        """1 when the linearised flow is asymptotically stable, else 0."""
        check_is_fitted(self, "report_")
        return np.array([int(self.is_hurwitz_)])


class WelfareComparison(BaseEstimator):
    """Utilitarian, egalitarian and Rawlsian allocations with their welfare ratios."""

    def __init__(self, tolerance=1e-10, grid_points=65, seed=0):
        self.tolerance = tolerance
        self.grid_points = grid_points
        self.seed = seed

    def fit(self, X, y=None):
        check_positive("tolerance", self.tolerance)
        scenario = check_scenario_input(X)
        opts = welfare.WelfareOptions(tolerance=self.tolerance, grid_points=int(self.grid_points), seed=int(self.seed))
        self.report_ = welfare.compare(scenario, opts)
        self.sw_ratio_ = dict(self.report_.sw_ratio)
        return self

    def transform(self, X=None):
        """SW ratios in the order utilitarian, egalitarian, Rawlsian."""
        check_is_fitted(self, "report_")
        return np.array([self.sw_ratio_[t] for t in welfare.WELFARE_TYPES])
