import numpy as np
import pytest
from hypothesis import given, settings

from scmarket import presets
from scmarket.equilibrium import (
    SolverOptions,
    interior_point_iterate,
    kkt_system,
    job_type_split,
    kkt_residual,
    kkt_residual_vector,
    solve,
    solve_kkt_closed_form,
    tatonnement,
)
from scmarket.model import DegenerateScenarioError, MarketScenario, MarketState, ScenarioError
from scmarket.scenario_io import make_customer, make_sc

from .conftest import random_scenarios, scenarios

# iteration count of the damped Newton primal-dual run on S1 from the zero
# state with k = 0.01, recorded from the first oracle run
S1_INTERIOR_POINT_ITERATIONS = 1885


def _vec(res, scn):
    return res.state.to_vector(scn.layout)


def test_s1_closed_form(s1):
    res = solve_kkt_closed_form(s1)
    assert res.state.rho["SC1"] == pytest.approx(70.5, abs=1e-12)
    for ch in ("reserved", "borrowed", "public_cloud"):
        assert res.state.vm_supply[("SC1", ch)] == pytest.approx(65.0, abs=1e-12)
    assert res.state.vm_demand["C1"] == pytest.approx(195.0, abs=1e-12)
    assert res.kkt_residual < 1e-12 and res.converged and res.iterations == 0


def test_s1_curtailed_closed_form():
    res = solve_kkt_closed_form(presets.s1(0.02, 0.02))
    assert res.state.rho["SC1"] == pytest.approx(577.44 / 8.08, abs=1e-9)
    assert res.state.rho["SC1"] == pytest.approx(71.465347, abs=1e-6)
    assert res.kkt_residual < 1e-12


def test_sc_without_customers_prices_at_intercept(s1):
    scn = MarketScenario(s1.scs + (make_sc("SC2", 90, -0.3, 0.6),), s1.customers)
    res = solve_kkt_closed_form(scn)
    assert res.state.rho["SC2"] == pytest.approx(90.0, abs=1e-12)
    for ch in ("reserved", "borrowed", "public_cloud"):
        assert res.state.vm_supply[("SC2", ch)] == pytest.approx(0.0, abs=1e-12)


def test_degenerate_slope_raises():
    # one channel with beta=-0.5 against one customer with beta=-0.5 cancels
    sc = make_sc("SC1", 90, -0.5, 0.6, channels={"reserved": None})
    c = make_customer("C1", "SC1", 168, -0.5, 0.1)
    with pytest.raises(DegenerateScenarioError):
        solve_kkt_closed_form(MarketScenario((sc,), (c,)))


def test_sc_without_enabled_channels_rejected():
    sc = make_sc("SC1", 90, -0.3, 0.6, channels={"reserved": {"vm_max": 0.0}})
    c = make_customer("C1", "SC1", 168, -0.5, 0.1)
    with pytest.raises(ScenarioError):
        solve_kkt_closed_form(MarketScenario((sc,), (c,)))


def test_residual_examples(s1):
    assert kkt_residual(MarketState.zeros(s1.layout), s1) == pytest.approx(168.0)
    x = _vec(solve_kkt_closed_form(s1), s1)
    for eps in (1e-3, -0.5, 2.0):
        y = x.copy()
        y[-1] += eps
        bound = (1 + 3 / 0.3 + 1 / 0.5) * abs(eps)
        assert kkt_residual_vector(y, s1.layout) <= bound + 1e-12


def test_warnings_for_out_of_box(tables):
    res = solve_kkt_closed_form(tables)
    assert res.converged
    assert any("outside" in w for w in res.warnings)


def test_enforce_bounds_s1_clamped_demand():
    scn = presets.s1(customer_bounds=(0.0, 100.0))
    res = solve_kkt_closed_form(scn, SolverOptions(enforce_bounds=True))
    assert res.converged
    assert res.state.vm_demand["C1"] == pytest.approx(100.0)
    assert res.state.vm_supply[("SC1", "reserved")] == pytest.approx(100 / 3)
    assert kkt_residual(res.state, scn, enforce_bounds=True) < 1e-9


def test_tatonnement_s1_converges(s1):
    res = tatonnement(s1)
    assert res.converged and res.status == "converged"
    assert res.state.rho["SC1"] == pytest.approx(70.5, abs=1e-6)
    assert res.kkt_residual <= 1e-6


def test_tatonnement_fixed_point(s1):
    res = tatonnement(s1, SolverOptions(initial_prices={"SC1": 70.5}))
    assert res.iterations == 0 and res.state.rho["SC1"] == 70.5


def test_tatonnement_large_step_diverges(s1):
    res = tatonnement(s1, SolverOptions(step_scale=0.3))
    assert res.status == "diverged" and not res.converged


def test_interior_point_s1(s1):
    res = interior_point_iterate(s1)
    assert res.converged
    assert res.iterations == S1_INTERIOR_POINT_ITERATIONS
    assert np.abs(_vec(res, s1) - _vec(solve_kkt_closed_form(s1), s1)).max() < 1e-3
    tat = tatonnement(s1)
    assert np.abs(_vec(res, s1) - _vec(tat, s1)).max() < 1e-5


def test_interior_point_from_solution_has_zero_update(s1):
    exact = solve_kkt_closed_form(s1).state
    res = interior_point_iterate(s1, SolverOptions(initial_state=exact))
    assert res.iterations == 0
    assert np.array_equal(_vec(res, s1), exact.to_vector(s1.layout))


def test_gradient_direction_diverges_on_s1(s1):
    res = interior_point_iterate(s1, SolverOptions(direction="gradient"))
    assert res.status == "diverged"


def test_solve_dispatch(s1):
    with pytest.raises(ValueError):
        solve(s1, "simplex")
    assert solve(s1, "tatonnement").method == "tatonnement"


def test_job_type_split():
    c = make_customer("C1", "SC1", 168, -0.5, 0.1, alpha_e=100.0, beta_e=-0.25)
    assert job_type_split(c, 70.5) == {"e": pytest.approx(118.0)}


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tolerance=0.0)
    with pytest.raises(ValueError):
        SolverOptions(step_scale=-1.0)


@settings(max_examples=100, deadline=None)
@given(scenarios())
def test_closed_form_residual_property(scn):
    res = solve_kkt_closed_form(scn)
    assert res.kkt_residual < 1e-9


@settings(max_examples=30, deadline=None)
@given(scenarios())
def test_method_agreement_and_clearing(scn):
    exact = _vec(solve_kkt_closed_form(scn), scn)
    tol = 1e-9
    # a residual of tol moves the state by at most ||J^-1||_inf * tol
    jac, _ = kkt_system(scn.layout)
    gain = max(1.0, np.abs(np.linalg.inv(jac)).sum(axis=1).max())
    opts = SolverOptions(tolerance=tol, max_iterations=20000)
    for res in (tatonnement(scn, opts), interior_point_iterate(scn, opts)):
        if res.converged:
            assert res.kkt_residual <= tol
            v = _vec(res, scn)
            assert np.abs(v - exact).max() <= 10 * tol * gain
            q, d, _ = scn.layout.split(v)
            clearing = np.bincount(scn.layout.demand_sc, d * scn.layout.demand_eff, scn.layout.n_sc) - np.bincount(
                scn.layout.supply_sc, q, scn.layout.n_sc
            )
            assert np.abs(clearing).max() <= tol


def test_uniqueness_probe(s1):
    a = tatonnement(s1, SolverOptions(initial_prices={"SC1": 0.0}))
    b = tatonnement(s1, SolverOptions(initial_prices={"SC1": 150.0}))
    assert a.converged and b.converged
    assert np.abs(_vec(a, s1) - _vec(b, s1)).max() < 1e-5


def test_random_batch_residuals():
    for scn in random_scenarios(100):
        assert solve_kkt_closed_form(scn).kkt_residual < 1e-9
