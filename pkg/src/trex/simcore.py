"""Deterministic 1 s microscopic traffic core.

Vehicles follow the Krauss safe-speed rule, change lanes with a small
utility model, stop at red and yellow signals, and leave the network at the
end of their destination edge.  Incidents are blocked lanes occupied by
immobile IC vehicles; nearby drivers slow down and may become aware of them
and reroute.

Within a step the order is fixed: incident deployment and clearance,
demand insertion, lane changes, speed computation, movement and edge
transitions (by vehicle id), statistics.  Positions are the front bumper
offset from the start of the current edge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from typing import IO, Mapping

import numpy as np

from . import behavior
from .incidents import Incident, clear_incident, deploy_incident, draw_incidents
from .netmodel import DriverClass, NetworkModel
from .rng import make_streams
from .routing import cost_to_go, free_flow_costs, noisy_costs, shortest_path

STOPPED_SPEED = 0.1  # m/s
LC_THRESHOLD = 0.4
SPEED_GAIN_RATIO = 1.10
COOP_REACH = 10.0  # m, how far a merge request is visible to neighbours


@dataclass
class SimConfig:
    horizon: float = 3600.0
    warmup: float = 100.0
    step: float = 1.0
    decision_period: float = 10.0
    accel: float = 2.6
    decel: float = 4.5
    tau: float = 1.0
    length: float = 5.0
    min_gap: float = 2.5
    time_to_teleport: float = 300.0
    approach_horizon: float = 100.0
    cost_half_life: float = 120.0
    regions: dict[str, list[str]] | None = None

    def __post_init__(self):
        if self.step != 1.0:
            raise ValueError("sim.step: only 1 s steps are supported")
        if not self.horizon > 0 or self.warmup < 0 or self.warmup >= self.horizon:
            raise ValueError("sim: need 0 <= warmup < horizon")
        if not self.decision_period >= 1 or self.decision_period != int(self.decision_period):
            raise ValueError("sim.decision_period: must be a whole number of steps")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"sim: unknown field {unknown[0]!r}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class LCWeights:
    strategic: float = 1.0
    speed_gain: float = 0.5
    cooperative: float = 0.5
    keep_right: float = 0.3


DEFAULT_LC = LCWeights()
CONTEXT_LC = LCWeights(1.0, 1.0, 1.0, 0.0)


def safe_speed(leader_speed: float, gap: float, decel: float = 4.5, tau: float = 1.0) -> float:
    """Krauss safe speed for a follower ``gap`` metres behind its leader."""
    if gap <= 0.0:
        return 0.0
    bt = decel * tau
    return max(0.0, -bt + math.sqrt(bt * bt + leader_speed * leader_speed + 2.0 * decel * gap))


class Vehicle:
    __slots__ = (
        "id", "route", "ri", "lane", "pos", "speed", "length", "accel", "decel",
        "driver", "aware", "aware_sources", "depart", "waiting", "cur_wait", "stops",
        "distance", "freeflow", "edge_entry", "edge_delay", "within_ssd", "is_ic",
        "reroutes", "teleports", "status", "arrival", "cap", "stopped", "visited",
    )

    def __init__(self, vid: str, route: list[str], driver: DriverClass | None, length=5.0, accel=2.6, decel=4.5, is_ic=False):
        self.id = vid
        self.route = route
        self.ri = 0
        self.lane = 0
        self.pos = 0.0
        self.speed = 0.0
        self.length = length
        self.accel = accel
        self.decel = decel
        self.driver = driver
        self.aware = False
        self.aware_sources: set[str] = set()
        self.depart = 0.0
        self.waiting = 0.0
        self.cur_wait = 0.0
        self.stops = 0
        self.distance = 0.0
        self.freeflow = 0.0
        self.edge_entry = 0.0
        self.edge_delay = 0.0
        self.within_ssd = False
        self.is_ic = is_ic
        self.reroutes = 0
        self.teleports = 0
        self.status = "running"
        self.arrival: float | None = None
        self.cap: float | None = None
        self.stopped = False
        self.visited: list[str] = []

    @property
    def edge(self) -> str:
        return self.route[self.ri]

    @property
    def next_edge(self) -> str | None:
        return self.route[self.ri + 1] if self.ri + 1 < len(self.route) else None

    @property
    def lc_weights(self) -> LCWeights:
        return CONTEXT_LC if self.within_ssd else DEFAULT_LC

    def __repr__(self):
        return f"Vehicle({self.id}, {self.edge}:{self.lane} @ {self.pos:.1f}m, {self.speed:.2f}m/s)"


@dataclass
class TripRecord:
    id: str
    origin: str
    destination: str
    driver: str
    depart: float
    arrival: float | None
    status: str  # arrived, running, removed
    waiting: float
    stops: int
    distance: float
    freeflow: float
    reroutes: int
    teleports: int
    route: list[str]

    @property
    def travel_time(self) -> float | None:
        return None if self.arrival is None else self.arrival - self.depart


@dataclass
class StepEvents:
    t: float
    insertions: list[str] = field(default_factory=list)
    arrivals: list[str] = field(default_factory=list)
    lane_changes: list[tuple[str, int, int]] = field(default_factory=list)
    reroutes: list[str] = field(default_factory=list)
    teleports: list[tuple[str, str, str]] = field(default_factory=list)
    incidents: list[tuple[str, str]] = field(default_factory=list)

    def empty(self) -> bool:
        return not (self.insertions or self.arrivals or self.lane_changes or self.reroutes or self.teleports or self.incidents)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "insertions": self.insertions,
            "arrivals": self.arrivals,
            "lane_changes": [list(x) for x in self.lane_changes],
            "reroutes": self.reroutes,
            "teleports": [list(x) for x in self.teleports],
            "incidents": [list(x) for x in self.incidents],
        }


class SignalState:
    """Current phase of one intersection plus an optional yellow transition."""

    def __init__(self, spec):
        self.spec = spec
        self.phase_sets = [frozenset(p) for p in spec.phases]
        self.phase = 0
        self.prev: int | None = None
        self.yellow_until = -math.inf

    def in_yellow(self, t: float) -> bool:
        return t < self.yellow_until

    def color(self, movement: str, t: float) -> str:
        cur = self.phase_sets[self.phase]
        if t < self.yellow_until:
            prev = self.phase_sets[self.prev]
            if movement in prev:
                return "green" if movement in cur else "yellow"
            return "red"
        return "green" if movement in cur else "red"

    def switch(self, target: int, t: float) -> bool:
        if not 0 <= target < len(self.phase_sets):
            raise IndexError(f"phase {target} out of range for {self.spec.node!r}")
        if target == self.phase:
            return False
        self.prev = self.phase
        self.phase = target
        self.yellow_until = t + self.spec.yellow
        return True


class EdgeStats:
    """Exponentially time-decayed mean of completed traversal times."""

    __slots__ = ("s", "w", "t")

    def __init__(self):
        self.s = 0.0
        self.w = 0.0
        self.t = 0.0

    def decay(self, t: float, half_life: float) -> None:
        if t > self.t:
            f = 0.5 ** ((t - self.t) / half_life)
            self.s *= f
            self.w *= f
            self.t = t

    def add(self, t: float, value: float, half_life: float) -> None:
        self.decay(t, half_life)
        self.s += value
        self.w += 1.0


# ---------------------------------------------------------------- lane change


@dataclass
class LaneOption:
    """What a vehicle sees of one candidate lane (its own or an adjacent one)."""

    index: int
    serves_route: bool = True
    blocked_ahead: bool = False
    anticipated_speed: float = 0.0
    feasible: bool = True
    merge_request: bool = False  # a neighbour wants to merge into this lane next to us


def score_lanes(current: int, options: Mapping[int, LaneOption], weights: LCWeights) -> dict[int, float]:
    """Weighted utility of each candidate lane.

    Components are in [-1, 1]: strategic (+1 serves the route, -1 blocked by
    an incident ahead), speed gain (+1 if anticipated speed beats the current
    lane by more than 10 % and 1 m/s), cooperative (+1 for leaving a lane a
    neighbour must merge into) and keep-right (+1 for the lane to the right).
    """
    cur = options[current]
    yield_needed = cur.merge_request
    out = {}
    for k, opt in options.items():
        strategic = -1.0 if opt.blocked_ahead else (1.0 if opt.serves_route else 0.0)
        gain = 0.0
        if k != current and opt.anticipated_speed > max(SPEED_GAIN_RATIO * cur.anticipated_speed, cur.anticipated_speed + 1.0):
            gain = 1.0
        coop = 1.0 if (yield_needed and k != current) else 0.0
        keep = 1.0 if k < current else 0.0
        out[k] = (
            weights.strategic * strategic
            + weights.speed_gain * gain
            + weights.cooperative * coop
            + weights.keep_right * keep
        )
    return out


def preferred_lane(current: int, options: Mapping[int, LaneOption], weights: LCWeights, threshold: float = LC_THRESHOLD) -> int:
    scores = score_lanes(current, options, weights)
    best, bar = current, scores[current] + threshold
    # ascending index, strict comparison: the right lane wins ties
    for k in sorted(options):
        if k != current and scores[k] > bar:
            best, bar = k, scores[k]
    return best


def lane_change_decide(current: int, options: Mapping[int, LaneOption], weights: LCWeights = DEFAULT_LC, threshold: float = LC_THRESHOLD) -> str:
    """Return ``"stay"``, ``"left"`` or ``"right"``.

    A change needs a score advantage above ``threshold`` over the current
    lane and a feasible gap in the target lane.
    """
    if len(options) <= 1:
        return "stay"
    best = preferred_lane(current, options, weights, threshold)
    if best == current or not options[best].feasible:
        return "stay"
    return "left" if best > current else "right"


# ---------------------------------------------------------------- simulation


class Simulation:
    """One episode of traffic on a scenario, seeded through named streams."""

    def __init__(
        self,
        scenario,
        seed: int = 0,
        episode: int = 0,
        incidents: list[Incident] | None = None,
        incidents_enabled: bool = True,
        trace: IO[str] | None = None,
    ):
        self.scenario = scenario
        self.net: NetworkModel = scenario.network
        self.cfg: SimConfig = scenario.sim
        self.icm: behavior.ICMConfig = scenario.icm
        self.seed = seed
        self.episode = episode
        self.rng = make_streams(seed, episode)
        self.t = 0.0
        self.trace = trace
        self._events = StepEvents(0.0)

        self.lanes: dict[tuple[str, int], list[Vehicle]] = {ln: [] for ln in self.net.lanes()}
        self.vehicles: dict[str, Vehicle] = {}
        self.ic: dict[str, Vehicle] = {}
        self.trips: list[TripRecord] = []
        self.inserted = 0
        self.arrived = 0
        self.removed = 0
        self.teleport_count = 0
        self.reroute_count = 0
        self._counter = 0
        self._ic_counter = 0
        self.pending: dict[str, list[Vehicle]] = {}
        self.signals = {n: SignalState(spec) for n, spec in self.net.intersections.items()}
        self.signal_log: list[tuple[float, str, int, bool]] = []
        self.edge_stats = {e: EdgeStats() for e in self.net.edges}
        self.lane_stops: dict[tuple[str, int], list[float]] = {ln: [0.0, 0.0] for ln in self.lanes}
        self.queue_sum = 0.0
        self.queue_samples = 0
        self.volume = {e: 0 for e in self.net.edges}
        self.merge_requests: dict[tuple[str, int], list[Vehicle]] = {}
        self.info = behavior.InfoEnvironment(self.net, self.icm, seed)
        self._ff = free_flow_costs(self.net)
        self._route_cache: dict[tuple[str, str], list[str]] = {}
        self._serving: dict[tuple[str, str | None], frozenset[int]] = {}
        self._driver_mix = list(scenario.demand.driver_mix)
        self._driver_p = np.array([d.share for d in self._driver_mix], dtype=float)
        self._driver_p = self._driver_p / self._driver_p.sum()

        if incidents is None:
            incidents = (
                draw_incidents(scenario.incidents, self.net, self.rng["incidents"], self.cfg.warmup, self.cfg.horizon)
                if incidents_enabled
                else []
            )
        self.incidents: list[Incident] = incidents
        self._blocked_edges: set[str] = set()
        self._active_by_edge: dict[str, list[Incident]] = {}

    # ----------------------------------------------------------- accounting
    @property
    def in_network(self) -> int:
        return len(self.vehicles)

    def conservation_ok(self) -> bool:
        return self.inserted == self.in_network + self.arrived + self.removed

    def lane_vehicles(self, edge: str, lane: int) -> list[Vehicle]:
        return self.lanes[(edge, lane)]

    def active_incidents(self) -> list[Incident]:
        return [i for i in self.incidents if i.state == "active"]

    def deployed_incidents(self) -> list[Incident]:
        return [i for i in self.incidents if i.state != "pending"]

    def on_incident_change(self) -> None:
        self._active_by_edge = {}
        for inc in self.active_incidents():
            self._active_by_edge.setdefault(inc.edge, []).append(inc)
        self._blocked_edges = {
            e for e, incs in self._active_by_edge.items()
            if len({k for i in incs for k in i.lanes}) >= self.net.edges[e].lanes
        }
        if not self._active_by_edge:
            for v in self.vehicles.values():
                v.within_ssd = False
                v.cap = None

    # ----------------------------------------------------------- lane lists
    def _insert_sorted(self, v: Vehicle) -> None:
        lane = self.lanes[(v.edge, v.lane)]
        i = 0
        while i < len(lane) and lane[i].pos >= v.pos:
            i += 1
        lane.insert(i, v)

    def _remove_from_lane(self, v: Vehicle) -> None:
        self.lanes[(v.edge, v.lane)].remove(v)

    def add_ic_vehicle(self, edge: str, lane: int, front: float, length: float) -> str:
        self._ic_counter += 1
        v = Vehicle(f"ic{self._ic_counter:04d}", [edge], None, length=length, is_ic=True)
        v.lane = lane
        v.pos = front
        self.ic[v.id] = v
        self._insert_sorted(v)
        return v.id

    def remove_ic_vehicle(self, vid: str) -> None:
        v = self.ic.pop(vid, None)
        if v is not None:
            self._remove_from_lane(v)

    # ----------------------------------------------------------- routing
    def free_flow_route(self, origin: str, destination: str) -> list[str]:
        key = (origin, destination)
        if key not in self._route_cache:
            self._route_cache[key] = shortest_path(self.net, self._ff, origin, destination, "dijkstra")
        return list(self._route_cache[key])

    def measured_costs(self) -> dict[str, float]:
        out = {}
        hl = self.cfg.cost_half_life
        for eid, e in self.net.edges.items():
            ff = e.free_flow_time
            st = self.edge_stats[eid]
            st.decay(self.t, hl)
            if st.w >= 0.25:
                c = st.s / st.w
            else:
                speeds = [v.speed for k in range(e.lanes) for v in self.lanes[(eid, k)] if not v.is_ic]
                if speeds:
                    c = e.length / max(sum(speeds) / len(speeds), STOPPED_SPEED)
                else:
                    c = ff
            out[eid] = max(c, ff)
        return out

    def perceived_costs(self, v: Vehicle) -> dict[str, float]:
        costs = noisy_costs(self.measured_costs(), v.driver.error if v.driver else 0.0, self.rng["rerouting"])
        if v.aware:
            for e in self._blocked_edges:
                costs[e] = math.inf
        return costs

    # ----------------------------------------------------------- teleport
    def _slot_on_lane(self, edge: str, lane: int, v: Vehicle, min_rear: float) -> float | None:
        length = self.net.edges[edge].length
        front = min_rear + v.length
        others = sorted((u for u in self.lanes[(edge, lane)] if u is not v), key=lambda u: u.pos)
        gap = self.cfg.min_gap
        moved = True
        while moved:
            moved = False
            for u in others:
                if u.pos - u.length - gap < front and u.pos + gap > front - v.length:
                    front = u.pos + gap + v.length
                    moved = True
        return front if front <= length else None

    def _entry_lane(self, edge: str, next_edge: str | None, v: Vehicle) -> int | None:
        lanes = self.net.lanes_to(edge, next_edge) if next_edge else list(range(self.net.edges[edge].lanes))
        if not lanes:
            lanes = list(range(self.net.edges[edge].lanes))
        best, best_room = None, -math.inf
        for k in lanes:
            q = self.lanes[(edge, k)]
            room = math.inf if not q else q[-1].pos - q[-1].length - self.cfg.min_gap
            if room >= 0 and room > best_room:
                best, best_room = k, room
        return best

    def teleport(self, v: Vehicle, reason: str, min_rear: float | None = None, events: StepEvents | None = None) -> None:
        """Move ``v`` past an obstruction along its route, or remove it if there is no room."""
        events = events or self._events
        old_edge, old_pos = v.edge, v.pos
        self._remove_from_lane(v)
        if min_rear is not None:
            front = self._slot_on_lane(v.edge, v.lane, v, min_rear)
            if front is not None:
                e = self.net.edges[v.edge]
                v.freeflow += (front - v.pos) / e.speed
                v.distance += front - v.pos
                v.pos = front
                v.speed = 0.0
                v.cur_wait = 0.0
                self._insert_sorted(v)
                v.teleports += 1
                self.teleport_count += 1
                events.teleports.append((v.id, reason, "relocate"))
                return
        skipped_ff = (self.net.edges[old_edge].length - old_pos) / self.net.edges[old_edge].speed
        skipped = self.net.edges[old_edge].length - old_pos
        for j in range(v.ri + 1, len(v.route)):
            edge = v.route[j]
            nxt = v.route[j + 1] if j + 1 < len(v.route) else None
            lane = self._entry_lane(edge, nxt, v)
            if lane is not None and not any(
                u.is_ic and u.pos - u.length < v.length + self.cfg.min_gap for u in self.lanes[(edge, lane)]
            ):
                v.ri = j
                v.lane = lane
                v.pos = 0.0
                v.speed = 0.0
                v.cur_wait = 0.0
                v.edge_entry = self.t
                v.edge_delay = 0.0
                v.within_ssd = False
                v.cap = None
                v.freeflow += skipped_ff
                v.distance += skipped
                v.visited.append(edge)
                self._insert_sorted(v)
                v.teleports += 1
                self.teleport_count += 1
                events.teleports.append((v.id, reason, "relocate"))
                return
            e = self.net.edges[edge]
            skipped_ff += e.free_flow_time
            skipped += e.length
        v.teleports += 1
        self.teleport_count += 1
        self._finish(v, "removed")
        events.teleports.append((v.id, reason, "remove"))

    # ----------------------------------------------------------- trips
    def _finish(self, v: Vehicle, status: str) -> None:
        v.status = status
        if status == "arrived":
            v.arrival = self.t + 1.0
            self.arrived += 1
        elif status == "removed":
            self.removed += 1
        del self.vehicles[v.id]
        self.trips.append(self._record(v))

    def _record(self, v: Vehicle) -> TripRecord:
        return TripRecord(
            v.id, v.route[0], v.route[-1], v.driver.name if v.driver else "", v.depart, v.arrival,
            v.status, v.waiting, v.stops, v.distance, v.freeflow, v.reroutes, v.teleports, list(v.visited),
        )

    def trip_log(self) -> list[TripRecord]:
        """Completed trips plus a snapshot of vehicles still driving."""
        running = [self._record(v) for v in sorted(self.vehicles.values(), key=lambda v: v.id)]
        return list(self.trips) + running

    # ----------------------------------------------------------- demand
    def _generate_demand(self, events: StepEvents) -> None:
        rng = self.rng["demand"]
        t = self.t
        for f in self.scenario.demand.flows:
            if not (f.begin <= t < f.end) or f.rate <= 0:
                continue
            n = int(rng.poisson(f.rate / 3600.0))
            for _ in range(n):
                k = int(rng.choice(len(self._driver_mix), p=self._driver_p))
                self._counter += 1
                v = Vehicle(
                    f"v{self._counter:07d}",
                    self.free_flow_route(f.origin, f.destination),
                    self._driver_mix[k],
                    self.cfg.length,
                    self.cfg.accel,
                    self.cfg.decel,
                )
                self.pending.setdefault(f.origin, []).append(v)

    def _insert_pending(self, events: StepEvents) -> None:
        for origin in sorted(self.pending):
            queue = self.pending[origin]
            while queue:
                v = queue[0]
                lane = self._entry_lane(origin, v.next_edge, v)
                if lane is None:
                    break
                q = self.lanes[(origin, lane)]
                e = self.net.edges[origin]
                if q:
                    gap = q[-1].pos - q[-1].length - self.cfg.min_gap
                    v.speed = min(e.speed, safe_speed(q[-1].speed, gap, v.decel, self.cfg.tau))
                else:
                    v.speed = e.speed
                queue.pop(0)
                v.lane = lane
                v.pos = 0.0
                v.depart = self.t
                v.edge_entry = self.t
                v.visited.append(origin)
                self.vehicles[v.id] = v
                self.lanes[(origin, lane)].append(v)
                self.inserted += 1
                self.volume[origin] += 1
                events.insertions.append(v.id)
                if self.icm.force_aware:
                    v.aware = True
                    v.aware_sources.add("forced")
                if v.aware:
                    self._consider_reroute(v, events)
            if not queue:
                del self.pending[origin]

    def insert_demand(self) -> list[str]:
        """Draw this second's arrivals and insert whatever fits; returns inserted ids."""
        ev = StepEvents(self.t)
        self._events = ev
        self._generate_demand(ev)
        self._insert_pending(ev)
        return ev.insertions

    # ----------------------------------------------------------- signals
    def movement_color(self, movement_id: str, node: str) -> str:
        sig = self.signals.get(node)
        if sig is None:
            return "green"
        return sig.color(movement_id, self.t)

    def set_phase(self, node: str, target: int) -> bool:
        sig = self.signals[node]
        switched = sig.switch(target, self.t)
        if switched:
            self.signal_log.append((self.t, node, target, True))
        return switched

    # ----------------------------------------------------------- behaviour
    def _consider_reroute(self, v: Vehicle, events: StepEvents) -> None:
        # already heading into the destination: nothing to reconsider
        if v.ri >= len(v.route) - 2:
            return
        costs = self.perceived_costs(v)
        w = cost_to_go(self.net, costs, v.route[-1])
        probs = behavior.transition_probs(self.net, w, v.edge, v.route[v.ri + 1])
        if probs is None:
            return
        if self.icm.force_kappa is not None:
            kappa = self.icm.force_kappa
        else:
            d_gain = behavior.expected_gain(probs.actual, probs.typical) if sum(probs.actual) > 0 else 0.0
            d_loss = behavior.avoided_loss(probs.actual, probs.typical, probs.w)
            kappa = behavior.reroute_probability(d_gain, d_loss, self.icm.beta_gain, self.icm.beta_loss, self.icm.beta_0)
        if self.rng["rerouting"].random() >= kappa:
            return
        new = behavior.replan_route(self.net, v.route, v.ri, costs, self.rng["rerouting"], self.icm.routing, probs)
        if new is None:
            return
        v.route = new
        v.reroutes += 1
        self.reroute_count += 1
        events.reroutes.append(v.id)

    def _update_awareness(self, v: Vehicle, edge: str, t_exit: float) -> None:
        if v.aware:
            return
        deployed = self.deployed_incidents()
        if not deployed or self.icm.all_off():
            return
        probs = self.info.channel_probabilities(edge, v.edge_entry, t_exit, deployed)
        rng = self.rng["awareness"]
        for ch in behavior.CHANNELS:
            p = probs[ch]
            if p > 0.0 and rng.random() < p:
                v.aware_sources.add(ch)
        if v.aware_sources:
            v.aware = True

    # ----------------------------------------------------------- dynamics
    def _neighborhood(self, v: Vehicle, lane_idx: int) -> tuple[Vehicle | None, Vehicle | None]:
        leader = follower = None
        for u in self.lanes[(v.edge, lane_idx)]:
            if u is v:
                continue
            if u.pos > v.pos:
                leader = u
            else:
                follower = u
                break
        return leader, follower

    def _lane_options(self, v: Vehicle) -> dict[int, LaneOption]:
        e = self.net.edges[v.edge]
        nxt = v.next_edge
        key = (v.edge, nxt)
        serving = self._serving.get(key)
        if serving is None:
            serving = self._serving[key] = frozenset(self.net.lanes_to(v.edge, nxt)) if nxt else frozenset(range(e.lanes))
        incs = self._active_by_edge.get(v.edge, ())
        opts = {}
        gap0 = self.cfg.min_gap
        for k in (v.lane - 1, v.lane, v.lane + 1):
            if not 0 <= k < e.lanes:
                continue
            leader, follower = self._neighborhood(v, k)
            blocked = any(k in inc.lanes and inc.position > v.pos for inc in incs)
            if leader is None:
                speed = e.speed
                front_ok = True
            else:
                g = leader.pos - leader.length - v.pos - gap0
                speed = min(e.speed, safe_speed(leader.speed, g, v.decel, self.cfg.tau))
                front_ok = g >= 0 and v.speed <= safe_speed(leader.speed, g, v.decel, self.cfg.tau) + 1e-9
            rear_ok = True
            if follower is not None:
                g = v.pos - v.length - follower.pos - gap0
                rear_ok = g >= 0 and follower.speed <= safe_speed(v.speed, g, follower.decel, self.cfg.tau) + 1e-9
            if k == v.lane:
                front_ok = rear_ok = True
            request = False
            if k == v.lane:
                for r in self.merge_requests.get((v.edge, k), ()):
                    if r is not v and abs(r.pos - v.pos) <= COOP_REACH + v.length:
                        request = True
                        break
            opts[k] = LaneOption(k, k in serving, blocked, speed, front_ok and rear_ok, request)
        return opts

    def _lane_changes(self, events: StepEvents) -> None:
        requests: dict[tuple[str, int], list[Vehicle]] = {}
        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            if self.net.edges[v.edge].lanes < 2:
                continue
            opts = self._lane_options(v)
            weights = v.lc_weights
            target = preferred_lane(v.lane, opts, weights)
            if target == v.lane:
                continue
            if not opts[target].feasible:
                if opts[target].serves_route or opts[v.lane].blocked_ahead or not opts[v.lane].serves_route:
                    requests.setdefault((v.edge, target), []).append(v)
                continue
            self._remove_from_lane(v)
            old = v.lane
            v.lane = target
            self._insert_sorted(v)
            events.lane_changes.append((v.id, old, target))
        self.merge_requests = requests

    def _desired_speed(self, v: Vehicle, leader: Vehicle | None) -> float:
        cfg = self.cfg
        e = self.net.edges[v.edge]
        vmax = e.speed
        if v.cap is not None:
            vmax = min(vmax, v.cap)
        v_next = min(v.speed + v.accel, vmax)
        if leader is not None:
            g = leader.pos - leader.length - v.pos - cfg.min_gap
            return max(0.0, min(v_next, safe_speed(leader.speed, g, v.decel, cfg.tau)))
        # front of the lane
        dist = e.length - v.pos
        nxt = v.next_edge
        if nxt is None:
            return v_next
        m = self.net.movement_for(v.edge, v.lane, nxt)
        if m is None:
            return max(0.0, min(v_next, safe_speed(0.0, dist, v.decel, cfg.tau)))
        color = self.movement_color(m.id, e.to_node)
        if color == "red" or (color == "yellow" and dist >= v.speed * v.speed / (2 * v.decel)):
            return max(0.0, min(v_next, safe_speed(0.0, dist, v.decel, cfg.tau)))
        down = self.lanes[m.out_lane]
        if down:
            last = down[-1]
            g = dist + last.pos - last.length - cfg.min_gap
            return max(0.0, min(v_next, safe_speed(last.speed, g, v.decel, cfg.tau)))
        return v_next

    def _cooperative_cap(self, v: Vehicle, speed: float) -> float:
        reqs = self.merge_requests.get((v.edge, v.lane))
        if not reqs or v.lc_weights.cooperative <= 0:
            return speed
        for r in reqs:
            if r.pos > v.pos and r.pos - v.pos <= COOP_REACH + r.length + v.length:
                g = r.pos - r.length - v.pos - self.cfg.min_gap
                if g >= 0:
                    speed = min(speed, max(safe_speed(r.speed, g, v.decel, self.cfg.tau), 0.0))
        return speed

    def _speed_adaptation(self, v: Vehicle) -> None:
        incs = self._active_by_edge.get(v.edge)
        if not incs:
            if v.within_ssd:
                v.within_ssd = False
                v.cap = None
            return
        ahead = [inc.position - v.pos for inc in incs if inc.position > v.pos]
        if not ahead:
            v.within_ssd = False
            v.cap = None
            return
        cap, flag = behavior.speed_adaptation(min(ahead), v.speed, v.within_ssd)
        v.cap = cap
        v.within_ssd = flag

    def step(self) -> StepEvents:
        """Advance the simulation by one second."""
        cfg = self.cfg
        t = self.t
        events = StepEvents(t)
        self._events = events

        for inc in self.incidents:
            if inc.state == "active" and t >= inc.t_end:
                clear_incident(self, inc)
                events.incidents.append((inc.edge, "cleared"))
        for inc in self.incidents:
            if inc.state == "pending" and t >= inc.t_start:
                deploy_incident(self, inc)
                events.incidents.append((inc.edge, "deployed"))

        self._generate_demand(events)
        self._insert_pending(events)
        self._lane_changes(events)

        # speeds from the state at the start of the step
        new_speed: dict[str, float] = {}
        for key, lane in self.lanes.items():
            leader = None
            for v in lane:
                if v.is_ic:
                    leader = v
                    continue
                self._speed_adaptation(v)
                s = self._desired_speed(v, leader)
                new_speed[v.id] = self._cooperative_cap(v, s)
                leader = v

        # move within lanes, front to back, never overlapping the leader
        crossing: list[Vehicle] = []
        for key, lane in self.lanes.items():
            e = self.net.edges[key[0]]
            leader = None
            for v in lane:
                if v.is_ic:
                    leader = v
                    continue
                s = new_speed[v.id]
                new_pos = v.pos + s
                if leader is not None:
                    limit = leader.pos - leader.length
                    if new_pos > limit:
                        new_pos = max(v.pos, limit)
                        s = new_pos - v.pos
                v.distance += min(new_pos, e.length) - v.pos
                v.freeflow += (min(new_pos, e.length) - v.pos) / e.speed
                v.speed = s
                v.pos = new_pos
                v.edge_delay += 1.0 - s / e.speed
                if new_pos > e.length or (new_pos >= e.length and v.next_edge is None):
                    crossing.append(v)
                leader = v

        for v in sorted(crossing, key=lambda u: u.id):
            self._cross(v, events)

        self._statistics(events)
        if self.trace is not None and not events.empty():
            self.trace.write(json.dumps(events.to_dict()) + "\n")
        self.t = t + cfg.step
        return events

    def _cross(self, v: Vehicle, events: StepEvents) -> None:
        e = self.net.edges[v.edge]
        overshoot = v.pos - e.length
        t_exit = self.t + 1.0
        self.edge_stats[v.edge].add(t_exit, t_exit - v.edge_entry, self.cfg.cost_half_life)
        self._update_awareness(v, v.edge, t_exit)
        nxt = v.next_edge
        if nxt is None:
            self._remove_from_lane(v)
            v.pos = e.length
            self._finish(v, "arrived")
            events.arrivals.append(v.id)
            return
        m = self.net.movement_for(v.edge, v.lane, nxt)
        target = self.lanes[m.out_lane]
        new_pos = overshoot
        if target:
            last = target[-1]
            new_pos = min(new_pos, last.pos - last.length - self.cfg.min_gap)
        if new_pos < 0:
            # no room downstream: hold at the stop line
            v.distance -= v.pos - e.length
            v.freeflow -= (v.pos - e.length) / e.speed
            v.pos = e.length
            v.speed = 0.0
            return
        self._remove_from_lane(v)
        ne = self.net.edges[nxt]
        v.freeflow += new_pos / ne.speed
        v.distance += new_pos
        v.ri += 1
        v.lane = m.to_lane
        v.pos = new_pos
        v.edge_entry = t_exit
        v.edge_delay = 0.0
        v.within_ssd = False
        v.cap = None
        v.visited.append(nxt)
        target.append(v)
        self.volume[nxt] += 1
        if v.aware:
            self._consider_reroute(v, events)

    def _statistics(self, events: StepEvents) -> None:
        cfg = self.cfg
        ttt = cfg.time_to_teleport
        stuck: list[Vehicle] = []
        stopped_total = 0
        for key, lane in self.lanes.items():
            leader = None
            for v in lane:
                if v.is_ic:
                    leader = v
                    continue
                if v.speed < STOPPED_SPEED:
                    stopped_total += 1
                    v.waiting += 1.0
                    v.cur_wait += 1.0
                    if not v.stopped:
                        v.stops += 1
                        v.stopped = True
                    if ttt > 0 and v.cur_wait >= ttt and (leader is None or leader.is_ic):
                        stuck.append(v)
                else:
                    if v.stopped:
                        rec = self.lane_stops[key]
                        rec[0] += v.cur_wait
                        rec[1] += 1
                    v.stopped = False
                    v.cur_wait = 0.0
                leader = v
        for v in sorted(stuck, key=lambda u: u.id):
            if v.id in self.vehicles:
                self.teleport(v, "jam", events=events)
        if self.t >= cfg.warmup:
            self.queue_sum += stopped_total / max(1, len(self.lanes))
            self.queue_samples += 1

    def run(self, until: float | None = None) -> None:
        until = self.cfg.horizon if until is None else until
        while self.t < until:
            self.step()
