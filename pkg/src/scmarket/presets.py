"""Small hand-checkable markets used in docs and tests.

``s1``: one SC (three identical channels, alpha=90, beta=-0.3, tau=0.6)
serving one customer (alpha=168, beta=-0.5, tau=0.1). Its equilibrium is
rho=70.5, 65 VMs per channel, 195 VMs demanded.
"""

from __future__ import annotations

from .model import MarketScenario
from .scenario_io import make_customer, make_sc


def s1(kappa1: float = 0.0, kappa2: float = 0.0, tau_rho: float = 1.0, customer_bounds=(0.0, 1e9)) -> MarketScenario:
    sc = make_sc("SC1", 90.0, -0.3, 0.6, 0.0, 1e9, tau_rho)
    c = make_customer("C1", "SC1", 168.0, -0.5, 0.1, *customer_bounds, kappa1=kappa1, kappa2=kappa2)
    return MarketScenario(scs=(sc,), customers=(c,))


def s1_single(tau_rho: float = 1.0) -> MarketScenario:
    """``s1`` with only the reserved channel enabled; its linearisation is Hurwitz."""
    sc = make_sc("SC1", 90.0, -0.3, 0.6, 0.0, 1e9, tau_rho, channels={"reserved": None})
    c = make_customer("C1", "SC1", 168.0, -0.5, 0.1)
    return MarketScenario(scs=(sc,), customers=(c,))


def s2(tau_rho: float = 1.0) -> MarketScenario:
    """One SC with three distinct channels taken from the SC1, SC2 and SC3 table rows."""
    sc = make_sc(
        "SC1", 90.0, -0.3, 0.6, 0.0, 1e9, tau_rho,
        channels={
            "reserved": None,
            "borrowed": {"alpha": 102.0, "beta": -0.6, "tau": 0.2},
            "public_cloud": {"alpha": 80.0, "beta": -0.25, "tau": 0.6},
        },
    )
    c = make_customer("C1", "SC1", 168.0, -0.5, 0.1)
    return MarketScenario(scs=(sc,), customers=(c,))
