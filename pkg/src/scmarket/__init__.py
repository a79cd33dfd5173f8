"""Market model, equilibrium solvers, gradient-play dynamics, stability and welfare tools for small-cloud VM markets."""

from .dynamics import DynamicState, PerturbationSpec, TrajectoryRecord, integrate, perturb_state, rhs
from .equilibrium import EquilibriumResult, SolverOptions, kkt_residual, solve, solve_kkt_closed_form
from .estimators import GradientPlaySimulator, MarketEquilibrium, StabilityAnalyzer, WelfareComparison
from .model import (
    CustomerParams,
    MarketError,
    MarketScenario,
    MarketState,
    QuadraticCoefficients,
    ScenarioError,
    SmallCloudParams,
    SupplyChannelParams,
    social_welfare,
    validate_scenario,
)
from .scenario_io import load_scenario, load_tables, save_scenario
from .stability import LinearizedSystem, StabilityReport, analyze, assemble_linearization
from .sweep import SweepGrid, stability_map
from .welfare import WelfareOptions, WelfareReport, compare

__all__ = [
    "CustomerParams", "DynamicState", "EquilibriumResult", "GradientPlaySimulator", "LinearizedSystem",
    "MarketEquilibrium", "MarketError", "MarketScenario", "MarketState", "PerturbationSpec",
    "QuadraticCoefficients", "ScenarioError", "SmallCloudParams", "SolverOptions", "StabilityAnalyzer",
    "StabilityReport", "SupplyChannelParams", "SweepGrid", "TrajectoryRecord", "WelfareComparison",
    "WelfareOptions", "WelfareReport", "analyze", "assemble_linearization", "compare", "integrate",
    "kkt_residual", "load_scenario", "load_tables", "perturb_state", "rhs", "save_scenario",
    "social_welfare", "solve", "solve_kkt_closed_form", "stability_map", "validate_scenario",
]
