import numpy as np
import pytest
from hypothesis import strategies as st

from scmarket import presets
from scmarket.model import CHANNELS, MarketScenario
from scmarket.scenario_io import load_tables, make_customer, make_sc


def random_scenario(rng: np.random.Generator, kappa: bool = True, max_sc: int = 5, max_cust: int = 5) -> MarketScenario:
    """1-5 SCs with 1-5 customers each; alpha in [10, 200], beta in [-1, -0.01]."""
    scs, customers = [], []
    for i in range(int(rng.integers(1, max_sc + 1))):
        kinds = [c for c in CHANNELS if rng.random() < 0.7] or [CHANNELS[int(rng.integers(3))]]
        channels = {
            k: {"alpha": rng.uniform(10, 200), "beta": rng.uniform(-1, -0.01), "tau": rng.uniform(0.05, 1.0)}
            for k in kinds
        }
        scs.append(make_sc(f"SC{i + 1}", 100.0, -0.5, 0.5, 0.0, 1e9, rng.uniform(0.05, 5.0), channels))
        for j in range(int(rng.integers(1, max_cust + 1))):
            k1, k2 = (rng.uniform(0, 0.05), rng.uniform(0, 0.05)) if kappa else (0.0, 0.0)
            customers.append(
                make_customer(
                    f"C{i + 1}_{j + 1}", f"SC{i + 1}", rng.uniform(10, 200), rng.uniform(-1, -0.01),
                    rng.uniform(0.05, 0.2), 0.0, 1e9, kappa1=k1, kappa2=k2,
                )
            )
    return MarketScenario(scs=tuple(scs), customers=tuple(customers))


def random_scenarios(n: int = 100, seed: int = 20240601, **kw) -> list[MarketScenario]:
    rng = np.random.default_rng(seed)
    return [random_scenario(rng, **kw) for _ in range(n)]


@st.composite
def scenarios(draw, kappa: bool = True):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_scenario(np.random.default_rng(seed), kappa=kappa)


@pytest.fixture
def s1():
    return presets.s1()


@pytest.fixture
def s1_single():
    return presets.s1_single()


@pytest.fixture(scope="session")
def tables():
    return load_tables()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
