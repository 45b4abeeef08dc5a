"""Static road network, signal tables and demand.

A network is a directed graph of nodes (junctions) and edges (roads with one
or more lanes).  Movements connect an incoming lane to an outgoing lane at a
node.  Signalized nodes carry an :class:`IntersectionSpec` with an ordered
phase table and a symmetric conflict relation over their movements.

Lane 0 is the rightmost lane of an edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

MIN_EDGE_LENGTH = 30.0
PADDED_MOVEMENTS = 12

TURNS = ("through", "left", "right")


class NetworkError(ValueError):
    """Raised when a network or demand definition violates an invariant."""


@dataclass(frozen=True)
class Node:
    id: str
    x: float = 0.0
    y: float = 0.0


@dataclass(frozen=True)
class Edge:
    id: str
    from_node: str
    to_node: str
    length: float
    lanes: int = 1
    speed: float = 13.89

    @property
    def free_flow_time(self) -> float:
        return self.length / self.speed


@dataclass(frozen=True)
class Movement:
    id: str
    from_edge: str
    from_lane: int
    to_edge: str
    to_lane: int
    turn: str = "through"

    @property
    def in_lane(self) -> tuple[str, int]:
        return (self.from_edge, self.from_lane)

    @property
    def out_lane(self) -> tuple[str, int]:
        return (self.to_edge, self.to_lane)


def movement_id(from_edge: str, from_lane: int, to_edge: str, to_lane: int) -> str:
    return f"{from_edge}_{from_lane}>{to_edge}_{to_lane}"


@dataclass(frozen=True)
class IntersectionSpec:
    """Signal program of one node.

    ``phases`` is an ordered tuple of movement-id tuples, ``fixed_cycle``
    holds one green duration per phase for the fixed-time baseline, and
    ``conflicts`` is a set of unordered movement-id pairs.
    """

    node: str
    phases: tuple[tuple[str, ...], ...]
    yellow: float = 3.0
    fixed_cycle: tuple[float, ...] = ()
    conflicts: frozenset[frozenset[str]] = frozenset()

    def conflicting(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.conflicts

    @property
    def movement_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for phase in self.phases:
            for m in phase:
                seen.setdefault(m, None)
        return sorted(seen)


@dataclass(frozen=True)
class Flow:
    origin: str
    destination: str
    rate: float
    begin: float = 0.0
    end: float = math.inf


@dataclass(frozen=True)
class DriverClass:
    name: str
    share: float
    error: float


DEFAULT_DRIVER_MIX = (
    DriverClass("experienced", 0.4, 0.05),
    DriverClass("novice", 0.3, 0.10),
    DriverClass("distracted", 0.2, 0.20),
    DriverClass("cav", 0.1, 0.01),
)


@dataclass(frozen=True)
class DemandSpec:
    flows: tuple[Flow, ...] = ()
    driver_mix: tuple[DriverClass, ...] = DEFAULT_DRIVER_MIX

    def validate(self, net: "NetworkModel", horizon: float) -> None:
        total = sum(d.share for d in self.driver_mix)
        if abs(total - 1.0) > 1e-9:
            raise NetworkError(f"demand.driver_mix: shares sum to {total}, expected 1")
        for i, d in enumerate(self.driver_mix):
            if not 0.0 <= d.share <= 1.0:
                raise NetworkError(f"demand.driver_mix[{i}].share: {d.share} outside [0, 1]")
            if not 0.0 <= d.error <= 1.0:
                raise NetworkError(f"demand.driver_mix[{i}].error: {d.error} outside [0, 1]")
        for i, f in enumerate(self.flows):
            where = f"demand.flows[{i}]"
            for name in ("origin", "destination"):
                if getattr(f, name) not in net.edges:
                    raise NetworkError(f"{where}.{name}: unknown edge {getattr(f, name)!r}")
            if not f.rate >= 0:
                raise NetworkError(f"{where}.rate: must be >= 0, got {f.rate}")
            if f.begin < 0 or f.begin > horizon or f.end < f.begin:
                raise NetworkError(f"{where}: interval [{f.begin}, {f.end}] not within horizon {horizon}")
            if not net.reachable(f.origin, f.destination):
                raise NetworkError(f"{where}: destination {f.destination!r} unreachable from {f.origin!r}")


class NetworkModel:
    """Immutable road network with lookup indices built once at construction."""

    def __init__(
        self,
        nodes: Iterable[Node],
        edges: Iterable[Edge],
        movements: Iterable[Movement],
        intersections: Iterable[IntersectionSpec] = (),
    ):
        self.nodes: dict[str, Node] = {}
        for n in nodes:
            if n.id in self.nodes:
                raise NetworkError(f"network.nodes: duplicate node id {n.id!r}")
            self.nodes[n.id] = n
        self.edges: dict[str, Edge] = {}
        for e in edges:
            if e.id in self.edges:
                raise NetworkError(f"network.edges: duplicate edge id {e.id!r}")
            self.edges[e.id] = e
        self.movements: dict[str, Movement] = {}
        for m in movements:
            if m.id in self.movements:
                raise NetworkError(f"network.movements: duplicate movement id {m.id!r}")
            self.movements[m.id] = m
        self.intersections: dict[str, IntersectionSpec] = {}
        for spec in intersections:
            if spec.node in self.intersections:
                raise NetworkError(f"signals: duplicate intersection {spec.node!r}")
            self.intersections[spec.node] = spec
        self._validate()
        self._index()

    def _validate(self) -> None:
        for e in self.edges.values():
            where = f"network.edges[{e.id!r}]"
            for end in (e.from_node, e.to_node):
                if end not in self.nodes:
                    raise NetworkError(f"{where}: unknown node {end!r}")
            if not e.length >= MIN_EDGE_LENGTH:
                raise NetworkError(f"{where}.length: {e.length} < minimum {MIN_EDGE_LENGTH} m")
            if not (isinstance(e.lanes, int) and e.lanes >= 1):
                raise NetworkError(f"{where}.lanes: must be an integer >= 1, got {e.lanes!r}")
            if not e.speed > 0:
                raise NetworkError(f"{where}.speed: must be > 0, got {e.speed}")
        for m in self.movements.values():
            where = f"network.movements[{m.id!r}]"
            for edge_id, lane in ((m.from_edge, m.from_lane), (m.to_edge, m.to_lane)):
                if edge_id not in self.edges:
                    raise NetworkError(f"{where}: unknown edge {edge_id!r}")
                if not 0 <= lane < self.edges[edge_id].lanes:
                    raise NetworkError(f"{where}: lane {lane} does not exist on edge {edge_id!r}")
            if self.edges[m.from_edge].to_node != self.edges[m.to_edge].from_node:
                raise NetworkError(f"{where}: incoming edge does not end where outgoing edge starts")
            if m.turn not in TURNS:
                raise NetworkError(f"{where}.turn: unknown turn class {m.turn!r}")
        for spec in self.intersections.values():
            where = f"signals[{spec.node!r}]"
            if spec.node not in self.nodes:
                raise NetworkError(f"{where}: unknown node")
            if len(spec.phases) < 2:
                raise NetworkError(f"{where}: needs at least 2 phases")
            if not spec.yellow > 0:
                raise NetworkError(f"{where}.yellow: must be > 0")
            if spec.fixed_cycle and (
                len(spec.fixed_cycle) != len(spec.phases) or any(d <= 0 for d in spec.fixed_cycle)
            ):
                raise NetworkError(f"{where}.fixed_cycle: need one positive duration per phase")
            node_movements = {
                m.id for m in self.movements.values() if self.edges[m.from_edge].to_node == spec.node
            }
            used = set()
            for k, phase in enumerate(spec.phases):
                for mid in phase:
                    if mid not in node_movements:
                        raise NetworkError(f"{where}.phases[{k}]: movement {mid!r} does not belong to node")
                    used.add(mid)
            missing = sorted(node_movements - used)
            if missing:
                raise NetworkError(f"{where}: movement {missing[0]!r} is not served by any phase")
            for pair in spec.conflicts:
                for mid in pair:
                    if mid not in node_movements:
                        raise NetworkError(f"{where}.conflicts: unknown movement {mid!r}")
            violations = check_phase_conflicts(spec)
            if violations:
                raise NetworkError(f"{where}: {violations[0]}")

    def _index(self) -> None:
        self.out_edges: dict[str, list[str]] = {n: [] for n in self.nodes}
        self.in_edges: dict[str, list[str]] = {n: [] for n in self.nodes}
        for e in self.edges.values():
            self.out_edges[e.from_node].append(e.id)
            self.in_edges[e.to_node].append(e.id)
        self.lane_movements: dict[tuple[str, int], list[Movement]] = {}
        self.links: dict[tuple[str, str], list[Movement]] = {}
        succ: dict[str, set[str]] = {e: set() for e in self.edges}
        for m in self.movements.values():
            self.lane_movements.setdefault(m.in_lane, []).append(m)
            self.links.setdefault((m.from_edge, m.to_edge), []).append(m)
            succ[m.from_edge].add(m.to_edge)
        self.successors: dict[str, list[str]] = {e: sorted(s) for e, s in succ.items()}
        pred: dict[str, list[str]] = {e: [] for e in self.edges}
        for e, nxt in self.successors.items():
            for f in nxt:
                pred[f].append(e)
        self.predecessors: dict[str, list[str]] = {e: sorted(p) for e, p in pred.items()}
        self.max_speed = max((e.speed for e in self.edges.values()), default=1.0)
        self.mean_speed = (
            sum(e.speed for e in self.edges.values()) / len(self.edges) if self.edges else 1.0
        )

    # ---------------------------------------------------------------- queries
    def lanes(self) -> list[tuple[str, int]]:
        return [(e.id, k) for e in self.edges.values() for k in range(e.lanes)]

    def incoming_lanes(self, node: str) -> list[tuple[str, int]]:
        return [(e, k) for e in sorted(self.in_edges[node]) for k in range(self.edges[e].lanes)]

    def node_movements(self, node: str) -> list[Movement]:
        return sorted(
            (m for m in self.movements.values() if self.edges[m.from_edge].to_node == node),
            key=lambda m: m.id,
        )

    def lanes_to(self, edge: str, next_edge: str) -> list[int]:
        """Lanes of ``edge`` with a movement into ``next_edge``."""
        return sorted({m.from_lane for m in self.links.get((edge, next_edge), ())})

    def movement_for(self, edge: str, lane: int, next_edge: str) -> Movement | None:
        for m in self.lane_movements.get((edge, lane), ()):
            if m.to_edge == next_edge:
                return m
        return None

    def reachable(self, origin: str, destination: str) -> bool:
        seen = {origin}
        stack = [origin]
        while stack:
            e = stack.pop()
            if e == destination:
                return True
            for f in self.successors[e]:
                if f not in seen:
                    seen.add(f)
                    stack.append(f)
        return False

    def euclid(self, a: str, b: str) -> float:
        na, nb = self.nodes[a], self.nodes[b]
        return math.hypot(na.x - nb.x, na.y - nb.y)

    def heading(self, edge: str) -> float:
        e = self.edges[edge]
        a, b = self.nodes[e.from_node], self.nodes[e.to_node]
        return math.atan2(b.y - a.y, b.x - a.x)

    def source_edges(self) -> list[str]:
        return sorted(e for e in self.edges if not self.predecessors[e])

    def sink_edges(self) -> list[str]:
        return sorted(e for e in self.edges if not self.successors[e])


def check_phase_conflicts(
    spec: IntersectionSpec, conflicts: Iterable[Iterable[str]] | None = None, known: Iterable[str] | None = None
) -> list[str]:
    """Return one diagnostic per phase that permits a conflicting pair.

    ``conflicts`` overrides the table stored on ``spec``.  When ``known`` is
    given, a phase referencing a movement outside it raises ``KeyError``.
    """
    table = spec.conflicts if conflicts is None else {frozenset(p) for p in conflicts}
    if known is not None:
        known = set(known)
        for phase in spec.phases:
            for mid in phase:
                if mid not in known:
                    raise KeyError(f"unknown movement {mid!r}")
    violations = []
    for k, phase in enumerate(spec.phases):
        ordered = sorted(phase)
        pairs = [
            (a, b)
            for i, a in enumerate(ordered)
            for b in ordered[i + 1 :]
            if frozenset((a, b)) in table
        ]
        if pairs:
            shown = ", ".join(f"{a} x {b}" for a, b in pairs)
            violations.append(f"phase {k} permits conflicting movements: {shown}")
    return violations


def _angle_diff(a: float, b: float) -> float:
    d = (a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def classify_turn(net_nodes: dict[str, Node], e_in: Edge, e_out: Edge) -> str:
    a, b = net_nodes[e_in.from_node], net_nodes[e_in.to_node]
    c = net_nodes[e_out.to_node]
    h_in = math.atan2(b.y - a.y, b.x - a.x)
    h_out = math.atan2(c.y - b.y, c.x - b.x)
    turn = (h_out - h_in + math.pi) % (2 * math.pi) - math.pi
    if abs(turn) < math.pi / 4:
        return "through"
    return "left" if turn > 0 else "right"


def geometric_conflicts(
    nodes: dict[str, Node], edges: dict[str, Edge], movements: Iterable[Movement]
) -> frozenset[frozenset[str]]:
    """Conflict relation from approach geometry.

    Only movements from roughly perpendicular approaches can conflict: they do
    when they merge into the same outgoing edge or when neither is a right
    turn (their paths cross).  Opposing approaches are treated as permissive
    (left turners yield), so they never appear in the table.
    """
    ms = list(movements)
    heading = {}
    for m in ms:
        e = edges[m.from_edge]
        a, b = nodes[e.from_node], nodes[e.to_node]
        heading[m.id] = math.atan2(b.y - a.y, b.x - a.x)
    out = set()
    for i, m1 in enumerate(ms):
        for m2 in ms[i + 1 :]:
            if m1.from_edge == m2.from_edge:
                continue
            diff = _angle_diff(heading[m1.id], heading[m2.id])
            if not math.pi / 4 <= diff <= 3 * math.pi / 4:
                continue
            if m1.to_edge == m2.to_edge or (m1.turn != "right" and m2.turn != "right"):
                out.add(frozenset((m1.id, m2.id)))
    return frozenset(out)


def generate_grid(
    rows: int,
    cols: int,
    edge_length: float = 200.0,
    lanes: int = 2,
    speed: float = 13.89,
    yellow: float = 3.0,
) -> NetworkModel:
    """Orthogonal grid of signalized 4-approach intersections.

    Intersections are named ``n{r}_{c}``; each side of the grid gets one
    fringe node per row/column so every intersection has four approaches.
    With one lane every movement shares lane 0 and the signal program is two
    phases (NS, EW).  With two or more lanes the leftmost lane is an
    exclusive left-turn lane, the others carry through traffic and lane 0
    also turns right; the program adds protected left phases:
    (NS through, NS left, EW through, EW left).
    """
    if rows < 1 or cols < 1:
        raise NetworkError("generate_grid: rows and cols must be >= 1")
    nodes: dict[str, Node] = {}
    for r in range(rows):
        for c in range(cols):
            nodes[f"n{r}_{c}"] = Node(f"n{r}_{c}", c * edge_length, -r * edge_length)
    for c in range(cols):
        nodes[f"top{c}"] = Node(f"top{c}", c * edge_length, edge_length)
        nodes[f"bottom{c}"] = Node(f"bottom{c}", c * edge_length, -rows * edge_length)
    for r in range(rows):
        nodes[f"left{r}"] = Node(f"left{r}", -edge_length, -r * edge_length)
        nodes[f"right{r}"] = Node(f"right{r}", cols * edge_length, -r * edge_length)

    def col_chain(c: int) -> list[str]:
        return [f"top{c}"] + [f"n{r}_{c}" for r in range(rows)] + [f"bottom{c}"]

    def row_chain(r: int) -> list[str]:
        return [f"left{r}"] + [f"n{r}_{c}" for c in range(cols)] + [f"right{r}"]

    edges: dict[str, Edge] = {}
    for chain in [col_chain(c) for c in range(cols)] + [row_chain(r) for r in range(rows)]:
        for a, b in zip(chain, chain[1:]):
            for u, v in ((a, b), (b, a)):
                eid = f"{u}-{v}"
                edges[eid] = Edge(eid, u, v, float(edge_length), lanes, speed)

    movements: list[Movement] = []
    intersections: list[IntersectionSpec] = []
    for r in range(rows):
        for c in range(cols):
            node = f"n{r}_{c}"
            ins = [e for e in edges.values() if e.to_node == node]
            outs = [e for e in edges.values() if e.from_node == node]
            node_moves: list[Movement] = []
            for e_in in ins:
                for e_out in outs:
                    if e_out.to_node == e_in.from_node:
                        continue
                    turn = classify_turn(nodes, e_in, e_out)
                    if lanes == 1:
                        pairs = [(0, 0)]
                    elif turn == "right":
                        pairs = [(0, 0)]
                    elif turn == "left":
                        pairs = [(lanes - 1, lanes - 1)]
                    else:
                        pairs = [(k, k) for k in range(lanes - 1)]
                    for li, lo in pairs:
                        node_moves.append(
                            Movement(movement_id(e_in.id, li, e_out.id, lo), e_in.id, li, e_out.id, lo, turn)
                        )
            node_moves.sort(key=lambda m: m.id)
            movements.extend(node_moves)

            def axis(m: Movement) -> str:
                e = edges[m.from_edge]
                return "NS" if nodes[e.from_node].x == nodes[e.to_node].x else "EW"

            if lanes == 1:
                phases = [
                    tuple(m.id for m in node_moves if axis(m) == "NS"),
                    tuple(m.id for m in node_moves if axis(m) == "EW"),
                ]
                cycle = (30.0, 30.0)
            else:
                phases = []
                for ax in ("NS", "EW"):
                    phases.append(tuple(m.id for m in node_moves if axis(m) == ax and m.turn != "left"))
                    phases.append(tuple(m.id for m in node_moves if axis(m) == ax and m.turn == "left"))
                cycle = (30.0, 10.0, 30.0, 10.0)
            intersections.append(
                IntersectionSpec(
                    node,
                    tuple(phases),
                    yellow,
                    cycle,
                    geometric_conflicts(nodes, edges, node_moves),
                )
            )
    return NetworkModel(nodes.values(), edges.values(), movements, intersections)


def grid_boundary_demand(
    net: NetworkModel,
    total_rate: float,
    begin: float = 0.0,
    end: float = math.inf,
    weights: dict[str, float] | None = None,
    driver_mix: tuple[DriverClass, ...] = DEFAULT_DRIVER_MIX,
) -> DemandSpec:
    """Spread ``total_rate`` veh/h over all source-to-sink pairs.

    ``weights`` optionally scales each source edge's share of the total;
    pairs that leave through the node they entered from are skipped.
    """
    sources = net.source_edges()
    sinks = net.sink_edges()
    weights = weights or {}
    w_total = sum(weights.get(s, 1.0) for s in sources)
    flows = []
    for s in sources:
        dests = [
            d
            for d in sinks
            if net.edges[d].to_node != net.edges[s].from_node and net.reachable(s, d)
        ]
        if not dests:
            continue
        per = total_rate * weights.get(s, 1.0) / w_total / len(dests)
        flows.extend(Flow(s, d, per, begin, end) for d in dests)
    return DemandSpec(tuple(flows), driver_mix)
