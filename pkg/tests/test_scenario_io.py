import json

import numpy as np
import pytest
from hypothesis import given, settings

from scmarket import presets
from scmarket.model import ScenarioError
from scmarket.scenario_io import (
    ScenarioFileError,
    bundled_path,
    dumps_scenario,
    load_scenario,
    load_tables,
    loads_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)

from .conftest import scenarios


def test_tables_shape(tables):
    assert [sc.id for sc in tables.scs] == [f"SC{i}" for i in range(1, 6)]
    assert len(tables.customers) == 15
    # three customers per SC, in order
    assert [c.sc_id for c in tables.customers] == [f"SC{i}" for i in range(1, 6) for _ in range(3)]


def test_tables_values(tables):
    sc1 = tables.scs[0].channels[0]
    assert (sc1.coeffs.alpha, sc1.coeffs.beta, sc1.tau) == (90.0, -0.3, 0.6)
    c1 = tables.customers[0]
    assert (c1.coeffs_ag.alpha, c1.coeffs_ag.beta, c1.tau_ag) == (168.0, -0.5, 0.1)
    assert all(sc.tau_rho == 1.0 for sc in tables.scs)
    doc = json.loads(bundled_path().read_text())
    assert doc["version"] == 1


@settings(max_examples=50, deadline=None)
@given(scenarios())
def test_round_trip(scn):
    back = loads_scenario(dumps_scenario(scn))
    assert back == scn
    assert np.array_equal(back.layout.capacity_matrix(), scn.layout.capacity_matrix())


def test_file_round_trip(tmp_path, s1):
    path = tmp_path / "s1.json"
    save_scenario(s1, path)
    assert load_scenario(path) == s1
    assert load_scenario(str(path)) == s1


def test_empty_scs_is_a_validation_error():
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict({"version": 1, "scs": [], "customers": []})
    assert info.value.violations


def test_unknown_and_missing_keys(s1):
    doc = scenario_to_dict(s1)
    doc["customers"][0]["colour"] = "red"
    with pytest.raises(ScenarioFileError, match="unknown"):
        scenario_from_dict(doc)
    doc = scenario_to_dict(s1)
    del doc["scs"][0]["tau_rho"]
    with pytest.raises(ScenarioFileError, match="missing"):
        scenario_from_dict(doc)
    with pytest.raises(ScenarioFileError, match="version"):
        scenario_from_dict({**scenario_to_dict(s1), "version": 7})


def test_parse_error():
    with pytest.raises(ScenarioFileError):
        loads_scenario("{not json")


def test_unvalidated_load_keeps_bad_values(s1):
    doc = scenario_to_dict(s1)
    doc["customers"][0]["beta"] = 0.5
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)
    assert scenario_from_dict(doc, validate=False).customers[0].coeffs_ag.beta == 0.5


def test_load_tables_matches_bundled_file():
    assert load_tables() == load_scenario(bundled_path())


def test_channel_subset_round_trip():
    scn = presets.s2()
    assert loads_scenario(dumps_scenario(scn)) == scn
