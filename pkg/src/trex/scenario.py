"""Scenario JSON format: network, signals, demand, incidents, ICM and sim settings.

A scenario is one JSON document::

    {
      "id": "grid2x2",
      "network": {"nodes": [...], "edges": [...], "movements": [...]},
      "signals": [{"node", "phases", "yellow", "fixed_cycle", "conflicts"}],
      "demand": {"flows": [...], "driver_mix": [...]},
      "incidents": {...},
      "icm": {...},
      "sim": {...}
    }

``save_scenario`` writes a canonical form (sorted keys, fixed indentation),
so saving a loaded scenario reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .behavior import ICMConfig
from .incidents import IncidentConfig
from .netmodel import (
    DEFAULT_DRIVER_MIX,
    DemandSpec,
    DriverClass,
    Edge,
    Flow,
    IntersectionSpec,
    Movement,
    NetworkError,
    NetworkModel,
    Node,
    generate_grid,
    grid_boundary_demand,
)
from .simcore import SimConfig


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    id: str
    network: NetworkModel
    demand: DemandSpec
    incidents: IncidentConfig = field(default_factory=IncidentConfig)
    icm: ICMConfig = field(default_factory=ICMConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def validate(self) -> None:
        self.demand.validate(self.network, self.sim.horizon)
        if self.incidents.mode == "fixed":
            for inc in self.incidents.incidents:
                inc.validate(self.network, self.sim.warmup)
        if self.sim.regions:
            for name, edges in self.sim.regions.items():
                for e in edges:
                    if e not in self.network.edges:
                        raise ScenarioError(f"sim.regions[{name!r}]: unknown edge {e!r}")

    def with_incidents(self, config: IncidentConfig) -> "Scenario":
        return Scenario(self.id, self.network, self.demand, config, self.icm, self.sim)


def _num(x: float) -> Any:
    if isinstance(x, float) and math.isinf(x):
        return None
    if isinstance(x, float) and x.is_integer():
        return x
    return x


def network_to_dict(net: NetworkModel) -> dict:
    return {
        "nodes": [{"id": n.id, "x": n.x, "y": n.y} for n in net.nodes.values()],
        "edges": [
            {"id": e.id, "from": e.from_node, "to": e.to_node, "length": e.length, "lanes": e.lanes, "speed": e.speed}
            for e in net.edges.values()
        ],
        "movements": [
            {"from": [m.from_edge, m.from_lane], "to": [m.to_edge, m.to_lane], "turn": m.turn}
            for m in net.movements.values()
        ],
    }


def signals_to_list(net: NetworkModel) -> list[dict]:
    out = []
    for spec in net.intersections.values():
        out.append(
            {
                "node": spec.node,
                "phases": [list(p) for p in spec.phases],
                "yellow": spec.yellow,
                "fixed_cycle": list(spec.fixed_cycle),
                "conflicts": sorted(sorted(p) for p in spec.conflicts),
            }
        )
    return out


def demand_to_dict(demand: DemandSpec) -> dict:
    return {
        "flows": [
            {"origin": f.origin, "destination": f.destination, "rate": f.rate, "begin": f.begin, "end": _num(f.end)}
            for f in demand.flows
        ],
        "driver_mix": [{"name": d.name, "share": d.share, "error": d.error} for d in demand.driver_mix],
    }


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "id": sc.id,
        "network": network_to_dict(sc.network),
        "signals": signals_to_list(sc.network),
        "demand": demand_to_dict(sc.demand),
        "incidents": sc.incidents.to_dict(),
        "icm": sc.icm.to_dict(),
        "sim": sc.sim.to_dict(),
    }


def dumps(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=1, sort_keys=True) + "\n"


def save_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps(sc))


def _get(d: Mapping, key: str, where: str):
    if not isinstance(d, Mapping):
        raise ScenarioError(f"{where}: expected an object")
    if key not in d:
        raise ScenarioError(f"{where}.{key}: missing")
    return d[key]


def _build_network(data: Mapping) -> NetworkModel:
    net = _get(data, "network", "scenario")
    try:
        nodes = [Node(str(n["id"]), float(n["x"]), float(n["y"])) for n in _get(net, "nodes", "network")]
        edges = [
            Edge(str(e["id"]), str(e["from"]), str(e["to"]), float(e["length"]), e.get("lanes", 1), float(e.get("speed", 13.89)))
            for e in _get(net, "edges", "network")
        ]
        moves = []
        for i, m in enumerate(net.get("movements", [])):
            (fe, fl), (te, tl) = m["from"], m["to"]
            moves.append(Movement(f"{fe}_{fl}>{te}_{tl}", fe, int(fl), te, int(tl), m.get("turn", "through")))
        signals = []
        for s in data.get("signals", []):
            signals.append(
                IntersectionSpec(
                    s["node"],
                    tuple(tuple(p) for p in s["phases"]),
                    float(s.get("yellow", 3.0)),
                    tuple(float(x) for x in s.get("fixed_cycle", [])),
                    frozenset(frozenset(p) for p in s.get("conflicts", [])),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, NetworkError):
            raise
        raise ScenarioError(f"network: malformed entry ({exc!r})") from exc
    return NetworkModel(nodes, edges, moves, signals)


def _build_demand(data: Mapping) -> DemandSpec:
    d = data.get("demand", {})
    flows = []
    for i, f in enumerate(d.get("flows", [])):
        try:
            end = f.get("end")
            flows.append(
                Flow(f["origin"], f["destination"], float(f["rate"]), float(f.get("begin", 0.0)), math.inf if end is None else float(end))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"demand.flows[{i}]: malformed ({exc!r})") from exc
    mix = tuple(DriverClass(m["name"], float(m["share"]), float(m["error"])) for m in d.get("driver_mix", [])) or DEFAULT_DRIVER_MIX
    return DemandSpec(tuple(flows), mix)


def scenario_from_dict(data: Mapping) -> Scenario:
    sc = Scenario(
        str(data.get("id", "scenario")),
        _build_network(data),
        _build_demand(data),
        IncidentConfig.from_dict(data.get("incidents", {})),
        ICMConfig.from_dict(data.get("icm", {})),
        SimConfig.from_dict(data.get("sim", {})),
    )
    sc.validate()
    return sc


def loads(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ScenarioError("scenario: top level must be an object")
    return scenario_from_dict(data)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise ScenarioError(f"scenario file not found: {p}")
    try:
        return loads(p.read_text())
    except ScenarioError as exc:
        raise ScenarioError(f"{p}: {exc}") from exc


def grid_scenario(
    rows: int,
    cols: int,
    total_rate: float,
    scenario_id: str | None = None,
    lanes: int = 2,
    edge_length: float = 200.0,
    incidents: IncidentConfig | None = None,
    icm: ICMConfig | None = None,
    sim: SimConfig | None = None,
    weights: dict[str, float] | None = None,
) -> Scenario:
    """Grid network with boundary-to-boundary demand totalling ``total_rate`` veh/h."""
    net = generate_grid(rows, cols, edge_length, lanes)
    sim = sim or SimConfig()
    demand = grid_boundary_demand(net, total_rate, 0.0, sim.horizon, weights)
    sc = Scenario(
        scenario_id or f"grid{rows}x{cols}",
        net,
        demand,
        incidents or IncidentConfig(),
        icm or ICMConfig(),
        sim,
    )
    sc.validate()
    return sc


def _line_movements(net_edges: list[Edge], pairs: list[tuple[str, str]]) -> list[Movement]:
    lanes = {e.id: e.lanes for e in net_edges}
    out = []
    for a, b in pairs:
        for k in range(min(lanes[a], lanes[b])):
            out.append(Movement(f"{a}_{k}>{b}_{k}", a, k, b, k, "through"))
    return out


def corridor_scenario(
    rate: float = 900.0,
    lanes: int = 2,
    edge_length: float = 300.0,
    n_edges: int = 3,
    incidents: IncidentConfig | None = None,
    icm: ICMConfig | None = None,
    sim: SimConfig | None = None,
) -> Scenario:
    """Unsignalized straight road ``c0 -> c1 -> ...`` with one through flow."""
    nodes = [Node(f"k{i}", i * edge_length, 0.0) for i in range(n_edges + 1)]
    edges = [Edge(f"c{i}", f"k{i}", f"k{i + 1}", edge_length, lanes) for i in range(n_edges)]
    moves = _line_movements(edges, [(f"c{i}", f"c{i + 1}") for i in range(n_edges - 1)])
    net = NetworkModel(nodes, edges, moves)
    sim = sim or SimConfig()
    demand = DemandSpec((Flow("c0", f"c{n_edges - 1}", rate, 0.0, sim.horizon),))
    sc = Scenario("corridor", net, demand, incidents or IncidentConfig(), icm or ICMConfig(), sim)
    sc.validate()
    return sc


def diamond_scenario(
    rate: float = 600.0,
    incidents: IncidentConfig | None = None,
    icm: ICMConfig | None = None,
    sim: SimConfig | None = None,
) -> Scenario:
    """Two parallel routes between an entry and an exit link.

    ``entry -> top1 -> top2 -> exit`` is shorter than
    ``entry -> bottom1 -> bottom2 -> exit``, so free-flow routing uses the top.
    """
    nodes = [
        Node("o", 0.0, 0.0),
        Node("a", 200.0, 0.0),
        Node("b", 350.0, 100.0),
        Node("c", 350.0, -100.0),
        Node("d", 500.0, 0.0),
        Node("z", 700.0, 0.0),
    ]
    edges = [
        Edge("entry", "o", "a", 200.0, 1),
        Edge("top1", "a", "b", 200.0, 1),
        Edge("top2", "b", "d", 200.0, 1),
        Edge("bottom1", "a", "c", 260.0, 1),
        Edge("bottom2", "c", "d", 260.0, 1),
        Edge("exit", "d", "z", 200.0, 1),
    ]
    pairs = [("entry", "top1"), ("entry", "bottom1"), ("top1", "top2"), ("bottom1", "bottom2"), ("top2", "exit"), ("bottom2", "exit")]
    net = NetworkModel(nodes, edges, _line_movements(edges, pairs))
    sim = sim or SimConfig()
    demand = DemandSpec((Flow("entry", "exit", rate, 0.0, sim.horizon),))
    sc = Scenario("diamond", net, demand, incidents or IncidentConfig(), icm or ICMConfig(), sim)
    sc.validate()
    return sc


SINGLE_WEIGHTS = {"top0-n0_0": 3.0, "bottom0-n0_0": 3.0, "left0-n0_0": 1.0, "right0-n0_0": 1.0}


def single_intersection_scenario(
    rate: float = 2400.0,
    incidents: IncidentConfig | None = None,
    sim: SimConfig | None = None,
) -> Scenario:
    """One signalized single-lane crossing; north-south carries three times the east-west demand."""
    return grid_scenario(1, 1, rate, "single", lanes=1, incidents=incidents, sim=sim, weights=SINGLE_WEIGHTS)
