import json

import pytest

from trex.incidents import Incident, IncidentConfig
from trex.netmodel import NetworkError
from trex.scenario import (
    ScenarioError,
    corridor_scenario,
    diamond_scenario,
    dumps,
    grid_scenario,
    load_scenario,
    loads,
    save_scenario,
    single_intersection_scenario,
)
from trex.simcore import SimConfig

BUILDERS = {
    "grid": lambda: grid_scenario(2, 3, 1500.0, incidents=IncidentConfig(mode="random", count=2)),
    "corridor": lambda: corridor_scenario(
        incidents=IncidentConfig(mode="fixed", incidents=[Incident("c1", 100.0, (0, 1), 600.0, 600.0)])
    ),
    "diamond": lambda: diamond_scenario(),
    "single": lambda: single_intersection_scenario(),
}


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_round_trip_byte_identical(name, tmp_path):
    sc = BUILDERS[name]()
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_scenario(sc, p1)
    again = load_scenario(p1)
    save_scenario(again, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert again.network.intersections == sc.network.intersections
    assert again.demand == sc.demand


def test_parse_error_reports_line(tmp_path):
    text = dumps(single_intersection_scenario()).splitlines()
    text[5] = text[5] + ","
    p = tmp_path / "bad.json"
    p.write_text("\n".join(text))
    with pytest.raises(ScenarioError, match=r"line \d+, column \d+"):
        load_scenario(p)


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioError, match="not found"):
        load_scenario(tmp_path / "nope.json")


def test_missing_network():
    with pytest.raises(ScenarioError, match="network"):
        loads("{}")


def test_top_level_array():
    with pytest.raises(ScenarioError, match="object"):
        loads("[]")


def test_network_errors_propagate():
    data = json.loads(dumps(corridor_scenario()))
    data["network"]["edges"][0]["length"] = 10.0
    with pytest.raises(NetworkError, match="length"):
        loads(json.dumps(data))


def test_unknown_sim_field():
    data = json.loads(dumps(corridor_scenario()))
    data["sim"]["speed_of_light"] = 1
    with pytest.raises(ValueError, match="unknown field"):
        loads(json.dumps(data))


def test_bad_region_edge():
    with pytest.raises(ScenarioError, match="regions"):
        grid_scenario(1, 1, 100.0, sim=SimConfig(regions={"r": ["nowhere"]}))


def test_fixed_incident_before_warmup_rejected():
    with pytest.raises(ValueError, match="warm-up"):
        corridor_scenario(incidents=IncidentConfig(mode="fixed", incidents=[Incident("c1", 100.0, (0,), 50.0, 60.0)]))


def test_single_intersection_demand_split():
    sc = single_intersection_scenario(rate=2400.0)
    ns = sum(f.rate for f in sc.demand.flows if f.origin in ("top0-n0_0", "bottom0-n0_0"))
    assert ns == pytest.approx(1800.0)
    assert sum(f.rate for f in sc.demand.flows) == pytest.approx(2400.0)


def test_diamond_prefers_top_route():
    from trex.simcore import Simulation

    sim = Simulation(diamond_scenario(), incidents=[])
    assert sim.free_flow_route("entry", "exit") == ["entry", "top1", "top2", "exit"]
