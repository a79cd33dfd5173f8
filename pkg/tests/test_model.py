import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scmarket.model import (
    MarketScenario,
    MarketState,
    QuadraticCoefficients,
    ScenarioError,
    check_scenario,
    cost,
    curtailed_demand,
    customer_net_utility,
    effective_demand,
    marginal_cost,
    marginal_utility,
    sc_profit,
    social_welfare,
    social_welfare_vector,
    utility,
    validate_scenario,
)
from scmarket.scenario_io import make_customer, make_sc

from .conftest import scenarios

SC1 = QuadraticCoefficients(90.0, -0.3)
C1 = QuadraticCoefficients(168.0, -0.5)

coeffs = st.builds(
    QuadraticCoefficients,
    st.floats(0.1, 500, allow_nan=False),
    st.floats(-2.0, -1e-3, allow_nan=False),
)


def test_cost_examples():
    assert cost(0.0, SC1) == 0.0
    assert cost(100.0, SC1) == pytest.approx(7500.0, abs=1e-12)
    assert cost(65.0, SC1) == pytest.approx(5216.25, abs=1e-12)


def test_marginal_cost_examples():
    assert marginal_cost(0.0, SC1) == 90.0
    assert marginal_cost(65.0, SC1) == pytest.approx(70.5, abs=1e-12)
    h = 1e-6
    fd = (cost(10 + h, SC1) - cost(10 - h, SC1)) / (2 * h)
    assert fd == pytest.approx(marginal_cost(10.0, SC1), abs=1e-6)


def test_utility_examples():
    assert utility(0.0, C1) == 0.0
    assert utility(100.0, C1) == pytest.approx(14300.0, abs=1e-12)
    assert utility(195.0, C1) == pytest.approx(23253.75, abs=1e-12)
    assert marginal_utility(0.0, C1) == 168.0
    assert marginal_utility(195.0, C1) == pytest.approx(70.5, abs=1e-12)


def test_non_finite_quantity_rejected():
    for fn in (cost, marginal_cost, utility, marginal_utility):
        with pytest.raises(ValueError):
            fn(math.nan, SC1)
        with pytest.raises(ValueError):
            fn(math.inf, SC1)


def test_curtailed_demand():
    assert curtailed_demand(100.0, 0.0, 0.0) == 0.0
    assert curtailed_demand(100.0, 0.02, 0.02) == pytest.approx(4.0, abs=1e-12)
    with pytest.raises(ValueError):
        curtailed_demand(100.0, 0.5, 0.5)


def test_profit_and_net_utility():
    assert sc_profit(70.5, 0.0, SC1) == 0.0
    assert sc_profit(70.5, 65.0, SC1) == pytest.approx(-633.75, abs=1e-9)
    assert customer_net_utility(70.5, 0.0, C1) == 0.0
    assert customer_net_utility(70.5, 195.0, C1) == pytest.approx(9506.25, abs=1e-9)
    h = 1e-4
    # stationary where price equals the marginal
    assert (sc_profit(70.5, 65 + h, SC1) - sc_profit(70.5, 65 - h, SC1)) / (2 * h) == pytest.approx(0, abs=1e-6)
    assert (customer_net_utility(70.5, 195 + h, C1) - customer_net_utility(70.5, 195 - h, C1)) / (2 * h) == pytest.approx(0, abs=1e-6)


def test_effective_demand(s1):
    k = make_customer("C1", "SC1", 168, -0.5, 0.1, kappa1=0.02, kappa2=0.02)
    state = MarketState({}, {"C1": 195.0}, {})
    assert effective_demand(k, state) == pytest.approx(187.2, abs=1e-12)
    assert effective_demand(s1.customers[0], state) == 195.0
    assert effective_demand(k, MarketState({}, {"C1": 0.0}, {})) == 0.0


def test_social_welfare_s1(s1):
    layout = s1.layout
    eq = MarketState.from_vector(layout, [65.0, 65.0, 65.0, 195.0, 70.5])
    assert social_welfare(eq, s1) == pytest.approx(7605.0, abs=1e-9)
    assert social_welfare(MarketState.zeros(layout), s1) == 0.0
    assert social_welfare_vector(eq.to_vector(layout), layout) == pytest.approx(7605.0, abs=1e-9)


def test_state_vector_roundtrip(s1):
    layout = s1.layout
    x = np.arange(layout.size, dtype=float)
    assert np.array_equal(MarketState.from_vector(layout, x).to_vector(layout), x)
    assert layout.labels == ["vm_r[SC1]", "vm_b[SC1]", "vm_pc[SC1]", "vm_ag[C1]", "rho[SC1]"]


def test_state_keys_must_match(s1):
    bad = MarketState({("SC1", "reserved"): 1.0}, {"C1": 1.0}, {"SC1": 1.0})
    with pytest.raises(ValueError):
        bad.to_vector(s1.layout)


def test_validate_bundled_tables_clean(tables):
    assert validate_scenario(tables) == []
    assert len(tables.scs) == 5 and len(tables.customers) == 15


def test_validate_positive_beta(s1):
    sc = make_sc("SC1", 90, 0.3, 0.6, channels={"reserved": None})
    bad = dataclasses.replace(s1, scs=(sc,))
    problems = validate_scenario(bad)
    assert len(problems) == 1 and "beta" in problems[0]


def test_validate_duplicate_customer(s1):
    bad = dataclasses.replace(s1, customers=s1.customers * 2)
    problems = validate_scenario(bad)
    assert len(problems) == 1 and "C1" in problems[0]
    with pytest.raises(ScenarioError):
        check_scenario(bad)


def test_validate_unknown_sc_and_empty():
    c = make_customer("C1", "SCX", 168, -0.5, 0.1)
    sc = make_sc("SC1", 90, -0.3, 0.6)
    assert validate_scenario(MarketScenario((sc,), (c,)))
    assert validate_scenario(MarketScenario((), ()))


def test_zero_capacity_channel_excluded():
    sc = make_sc("SC1", 90, -0.3, 0.6, channels={"reserved": None, "borrowed": {"vm_max": 0.0}})
    assert [ch.channel for ch in sc.enabled_channels] == ["reserved"]


@given(coeffs)
def test_zero_at_origin(c):
    assert cost(0.0, c) == 0.0 and utility(0.0, c) == 0.0


@given(coeffs, st.floats(-1e4, 1e4))
def test_marginals_match_finite_differences(c, q):
    h = 1e-3 * max(1.0, abs(q))
    for f, df in ((cost, marginal_cost), (utility, marginal_utility)):
        fd = (f(q + h, c) - f(q - h, c)) / (2 * h)
        ref = df(q, c)
        assert abs(fd - ref) <= 1e-6 * max(1.0, abs(ref))


@given(coeffs, st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_cost_concave(c, a, b):
    mid = cost((a + b) / 2, c)
    avg = (cost(a, c) + cost(b, c)) / 2
    assert mid >= avg - 1e-9 * max(1.0, abs(mid), abs(avg))


@settings(max_examples=50, deadline=None)
@given(scenarios(), st.integers(0, 2**31))
def test_social_welfare_two_orders(scn, seed):
    layout = scn.layout
    x = np.random.default_rng(seed).uniform(0, 300, layout.size)
    state = MarketState.from_vector(layout, x)
    per_stakeholder = sum(utility(state.vm_demand[c.id], c.coeffs_ag) for c in scn.customers) - sum(
        cost(state.vm_supply[(sc.id, ch.channel)], ch.coeffs) for sc in scn.scs for ch in sc.enabled_channels
    )
    assert social_welfare(state, scn) == pytest.approx(per_stakeholder, rel=1e-12, abs=1e-9)
    assert social_welfare_vector(x, layout) == pytest.approx(per_stakeholder, rel=1e-12, abs=1e-9)


def test_social_welfare_additive(s1):
    other = MarketScenario(
        (make_sc("SC2", 102, -0.6, 0.2),),
        (make_customer("C2", "SC2", 140, -0.35, 0.2),),
    )
    both = MarketScenario(s1.scs + other.scs, s1.customers + other.customers)
    rng = np.random.default_rng(3)
    xa = rng.uniform(0, 100, s1.layout.size)
    xb = rng.uniform(0, 100, other.layout.size)
    sa, sb = MarketState.from_vector(s1.layout, xa), MarketState.from_vector(other.layout, xb)
    joint = MarketState({**sa.vm_supply, **sb.vm_supply}, {**sa.vm_demand, **sb.vm_demand}, {**sa.rho, **sb.rho})
    assert social_welfare(joint, both) == pytest.approx(social_welfare(sa, s1) + social_welfare(sb, other), rel=1e-12)
