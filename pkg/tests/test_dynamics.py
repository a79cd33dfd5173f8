import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scmarket import presets
from scmarket.dynamics import (
    DynamicState,
    PerturbationSpec,
    integrate,
    perturb_state,
    perturbed_equilibrium,
    project_multiplier_rhs,
    rhs,
    rk4_step,
    rhs_vectors,
)
from scmarket.equilibrium import solve_kkt_closed_form
from scmarket.model import MarketError, MarketState
from scmarket.scenario_io import make_sc
from scmarket.stability import assemble_linearization, hurwitz_check

from .conftest import random_scenarios, scenarios


def _eq(scn):
    return solve_kkt_closed_form(scn).state


def test_rhs_zero_at_equilibrium(s1):
    assert np.abs(rhs(DynamicState(_eq(s1)), s1)).max() < 1e-12


def test_rhs_hand_example(s1):
    x = np.zeros(s1.layout.size)
    x[-1] = 90.0
    state = DynamicState(MarketState.from_vector(s1.layout, x))
    np.testing.assert_allclose(rhs(state, s1), [0, 0, 0, 780.0, 0], atol=1e-12)


def test_doubling_tau_halves_rhs(s1):
    slow = dataclasses.replace(
        s1,
        scs=(make_sc("SC1", 90, -0.3, 1.2, tau_rho=2.0),),
        customers=(dataclasses.replace(s1.customers[0], tau_ag=0.2),),
    )
    x = np.random.default_rng(0).uniform(0, 200, s1.layout.size)
    state = DynamicState(MarketState.from_vector(s1.layout, x))
    np.testing.assert_allclose(rhs(state, slow), rhs(state, s1) / 2, rtol=1e-14)


def test_project_multiplier_rhs():
    assert project_multiplier_rhs(-3.0, 0.0) == 0.0
    assert project_multiplier_rhs(-3.0, 1.0) == -3.0
    assert project_multiplier_rhs(5.0, 0.0) == 5.0
    with pytest.raises(ValueError):
        project_multiplier_rhs(1.0, -1.0)


def test_rhs_dimension_mismatch(s1):
    bad = DynamicState(MarketState({("SC1", "reserved"): 0.0}, {"C1": 0.0}, {"SC1": 0.0}))
    with pytest.raises(ValueError):
        rhs(bad, s1)
    with pytest.raises(MarketError):
        rhs(DynamicState(_eq(s1), {"SCX": 0.0}), s1)


def test_integrate_stays_at_equilibrium(s1):
    eq = _eq(s1)
    traj = integrate(s1, DynamicState(eq), 10.0, 1e-3, record_every=1000, stop_on_convergence=False)
    assert traj.terminal_status == "max_time"
    assert traj.times[0] == 0.0 and traj.times[-1] == 10.0
    assert np.all(np.diff(traj.times) > 0)
    assert np.abs(traj.x1 - eq.to_vector(s1.layout)).max() < 1e-10


def test_integrate_stops_when_converged(s1):
    traj = integrate(s1, DynamicState(_eq(s1)), 10.0)
    assert traj.terminal_status == "converged" and len(traj.times) == 2


def test_integrate_validates_arguments(s1):
    start = DynamicState(_eq(s1))
    for kw in ({"t_end": 0.0}, {"dt": 0.0}, {"dt": -1.0}, {"t_end": float("inf")}):
        args = {"t_end": 1.0, "dt": 1e-3, **kw}
        with pytest.raises(ValueError):
            integrate(s1, start, **args)
    with pytest.raises(ValueError):
        integrate(s1, start, 1.0, method="midpoint")


def test_s2_outcome_matches_eigenvalue_oracle():
    scn = presets.s2()
    is_hurwitz, max_real = hurwitz_check(assemble_linearization(scn))
    assert not is_hurwitz and max_real > 0
    eq = _eq(scn)
    start = perturb_state(DynamicState(eq), 0.01, seed=7, layout=scn.layout)
    traj = integrate(scn, start, 200.0, 1e-3, record_every=1000)
    err = np.abs(traj.x1[-1] - eq.to_vector(scn.layout)).max()
    converged = traj.terminal_status == "converged" and err < 1e-4
    assert converged == is_hurwitz
    assert traj.terminal_status == "diverged"


def test_s1_single_converges_from_perturbation(s1_single):
    eq = _eq(s1_single)
    start = perturb_state(DynamicState(eq), 0.01, seed=1, layout=s1_single.layout)
    traj = integrate(s1_single, start, 200.0, 1e-3, record_every=100)
    assert traj.terminal_status == "converged"
    assert np.abs(traj.x1[-1] - eq.to_vector(s1_single.layout)).max() < 1e-4


def test_rk4_matches_fine_euler(s1):
    start = perturb_state(DynamicState(_eq(s1)), 0.05, seed=3, layout=s1.layout)
    a = integrate(s1, start, 1.0, 1e-2, "rk4", stop_on_convergence=False).x1[-1]
    b = integrate(s1, start, 1.0, 1e-4, "euler", stop_on_convergence=False, record_every=10000).x1[-1]
    assert np.abs(a - b).max() <= 1e-4 * np.abs(a).max()


def test_last_step_lands_on_t_end(s1):
    traj = integrate(s1, perturb_state(DynamicState(_eq(s1)), 0.01, 0, s1.layout), 0.0105, 1e-3, stop_on_convergence=False)
    assert traj.times[-1] == 0.0105 and len(traj.times) == 12


def test_perturb_state_properties(s1):
    base = DynamicState(_eq(s1))
    assert perturb_state(base, 0.0, 5, s1.layout) == base
    a = perturb_state(base, 0.01, 5, s1.layout)
    assert a == perturb_state(base, 0.01, 5, s1.layout)
    assert a != perturb_state(base, 0.01, 6, s1.layout)
    x0, x1 = base.market.to_vector(s1.layout), a.market.to_vector(s1.layout)
    assert np.all(np.abs(x1 - x0) <= 0.01 * np.abs(x0) + 1e-15)
    # the default key-order layout gives the same draw
    assert perturb_state(base, 0.01, 5) == a


def test_multipliers_stay_nonnegative():
    # tiny capacity makes the constraint bind
    scn = dataclasses.replace(presets.s1(), scs=(make_sc("SC1", 90, -0.3, 0.6, 0.0, 30.0),))
    start = DynamicState.at(_eq(scn), scn.layout, capacity=True)
    traj = integrate(scn, start, 5.0, 1e-3, record_every=10, stop_on_convergence=False)
    assert traj.x2.shape[1] == 1
    assert np.all(traj.x2 >= 0)
    assert traj.x2.max() > 0
    assert traj.labels[-1] == "mu[SC1]"


def test_negative_multiplier_rejected(s1):
    with pytest.raises(ValueError):
        DynamicState(_eq(s1), {"SC1": -1.0})


def test_perturbed_equilibrium_is_rest_point(s1):
    pert = PerturbationSpec({"SC1": 1.25})
    eq = perturbed_equilibrium(s1, pert)
    assert eq.rho["SC1"] == pytest.approx(70.5)
    assert eq.vm_supply[("SC1", "reserved")] == pytest.approx(52.0)
    assert np.abs(rhs(DynamicState(eq), s1, pert)).max() < 1e-12
    with pytest.raises(MarketError):
        PerturbationSpec({"SCX": 1.0}).factor_vector(s1.layout)


def test_states_view(s1):
    traj = integrate(s1, perturb_state(DynamicState(_eq(s1)), 0.01, 0, s1.layout), 0.01, 1e-3, stop_on_convergence=False)
    assert len(traj.states) == len(traj.times)
    assert traj.states[-1] == traj.final


@settings(max_examples=50, deadline=None)
@given(scenarios(), st.integers(0, 2**31))
def test_rhs_is_affine(scn, seed):
    layout = scn.layout
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(0, 300, layout.size), rng.uniform(0, 300, layout.size)
    a1 = assemble_linearization(scn).a1
    fx, _ = rhs_vectors(x, np.zeros(0), layout)
    fy, _ = rhs_vectors(y, np.zeros(0), layout)
    scale = max(1.0, np.abs(fx).max(), np.abs(fy).max())
    assert np.abs((fx - fy) - a1 @ (x - y)).max() <= 1e-10 * scale


@settings(max_examples=100, deadline=None)
@given(scenarios())
def test_rhs_zero_at_closed_form(scn):
    assert np.abs(rhs(DynamicState(_eq(scn)), scn)).max() < 1e-10


def test_time_reversal(s1_single):
    eq = _eq(s1_single)
    start = perturb_state(DynamicState(eq), 0.01, 2, s1_single.layout)
    layout = s1_single.layout
    x = integrate(s1_single, start, 2.0, 1e-3, stop_on_convergence=False, record_every=2000).x1[-1]

    def f(z):
        return rhs_vectors(z, np.zeros(0), layout)[0]

    z = x.copy()
    for _ in range(100):
        z = rk4_step(f, z, -1e-3)
    for _ in range(100):
        z = rk4_step(f, z, 1e-3)
    assert np.abs(z - x).max() < 1e-9 * max(1.0, np.abs(x).max())


def test_random_batch_correspondence():
    for scn in random_scenarios(100):
        assert np.abs(rhs(DynamicState(_eq(scn)), scn)).max() < 1e-10
