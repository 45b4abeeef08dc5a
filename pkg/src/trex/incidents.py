"""Incident sampling, deployment and clearance.

An incident blocks one or more lanes of an edge at a position for a while.
It is realised by inserting immobile "IC" vehicles on the blocked lanes at
the start time and removing them when the duration elapses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from .netmodel import MIN_EDGE_LENGTH, NetworkModel

END_MARGIN = 1200.0  # s, latest start is horizon minus this
POSITION_BUFFER = 10.0  # m at each end of the edge
IC_LENGTH = 5.0
CLEARANCE_HALF_WIDTH = 5.0  # vehicles overlapping p +- this are teleported on deployment

MODES = ("none", "fixed", "random")


class IncidentError(ValueError):
    pass


@dataclass
class Incident:
    edge: str
    position: float
    lanes: tuple[int, ...]
    t_start: float
    duration: float
    state: str = "pending"
    ic_vehicles: list[str] = field(default_factory=list)

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    def to_dict(self) -> dict:
        return {
            "edge": self.edge,
            "position": self.position,
            "lanes": list(self.lanes),
            "t_start": self.t_start,
            "duration": self.duration,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Incident":
        return cls(d["edge"], float(d["position"]), tuple(int(x) for x in d["lanes"]), float(d["t_start"]), float(d["duration"]))

    def validate(self, net: NetworkModel, warmup: float = 0.0) -> None:
        if self.edge not in net.edges:
            raise IncidentError(f"incident: unknown edge {self.edge!r}")
        e = net.edges[self.edge]
        if not 1 <= len(self.lanes) <= e.lanes or any(not 0 <= k < e.lanes for k in self.lanes):
            raise IncidentError(f"incident on {self.edge!r}: invalid lane set {list(self.lanes)}")
        if not POSITION_BUFFER <= self.position <= e.length - POSITION_BUFFER:
            raise IncidentError(f"incident on {self.edge!r}: position {self.position} outside buffers")
        if self.t_start < warmup:
            raise IncidentError(f"incident on {self.edge!r}: starts before warm-up")
        if not self.duration > 0:
            raise IncidentError(f"incident on {self.edge!r}: duration must be > 0")


@dataclass
class IncidentConfig:
    mode: str = "none"
    count: int = 2
    edge_distribution: str = "uniform"
    duration_rate: float = 0.029  # per minute
    edges: list[str] | None = None  # restrict candidate edges
    volumes: dict[str, float] | None = None  # for the empirical distribution
    incidents: list[Incident] = field(default_factory=list)  # fixed mode

    def __post_init__(self):
        if self.mode not in MODES:
            raise IncidentError(f"incidents.mode: unknown mode {self.mode!r}")
        if self.count < 0:
            raise IncidentError("incidents.count: must be >= 0")
        if not self.duration_rate > 0:
            raise IncidentError("incidents.duration_rate: must be > 0")
        if self.edge_distribution not in ("uniform", "empirical"):
            raise IncidentError(f"incidents.edge_distribution: unknown {self.edge_distribution!r}")
        if self.edge_distribution == "empirical" and not self.volumes:
            raise IncidentError("incidents.volumes: required for the empirical distribution")

    @property
    def mean_duration(self) -> float:
        return 60.0 / self.duration_rate

    @classmethod
    def from_dict(cls, d: Mapping) -> "IncidentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise IncidentError(f"incidents: unknown field {unknown[0]!r}")
        d = dict(d)
        d["incidents"] = [Incident.from_dict(x) for x in d.get("incidents", [])]
        return cls(**d)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["incidents"] = [i.to_dict() for i in self.incidents]
        return out


def empirical_edge_distribution(volumes: Mapping[str, float]) -> dict[str, float]:
    """Categorical distribution over edges proportional to observed volume."""
    positive = {e: float(v) for e, v in volumes.items() if v > 0}
    total = sum(positive.values())
    if total <= 0:
        raise IncidentError("empirical distribution: all edge volumes are zero")
    return {e: v / total for e, v in sorted(positive.items())}


def eligible_edges(config: IncidentConfig, net: NetworkModel) -> list[str]:
    cands = config.edges if config.edges is not None else list(net.edges)
    return sorted(e for e in cands if e in net.edges and net.edges[e].length >= MIN_EDGE_LENGTH)


def sample_incident(
    config: IncidentConfig,
    net: NetworkModel,
    rng: np.random.Generator,
    warmup: float = 100.0,
    horizon: float = 3600.0,
) -> Incident:
    """Draw one incident: edge, blocked lanes, position, start and duration."""
    if config.edge_distribution == "empirical":
        dist = empirical_edge_distribution(config.volumes or {})
        edges = [e for e in dist if e in eligible_edges(config, net)]
        if not edges:
            raise IncidentError("no eligible edge for incident sampling")
        probs = np.array([dist[e] for e in edges])
        edge = edges[int(rng.choice(len(edges), p=probs / probs.sum()))]
    else:
        edges = eligible_edges(config, net)
        if not edges:
            raise IncidentError("no eligible edge for incident sampling")
        edge = edges[int(rng.integers(len(edges)))]
    e = net.edges[edge]
    n_blocked = int(rng.integers(1, e.lanes + 1))
    position = float(rng.uniform(POSITION_BUFFER, e.length - POSITION_BUFFER))
    latest = horizon - END_MARGIN
    if latest <= warmup:
        raise IncidentError(f"start window ({warmup}, {latest}) is empty")
    # whole seconds so deployment lands exactly on a simulation step
    t_start = float(math.floor(rng.uniform(warmup, latest)))
    t_start = max(t_start, math.ceil(warmup))
    duration = float(max(1.0, round(rng.exponential(60.0 / config.duration_rate))))
    return Incident(edge, position, tuple(range(n_blocked)), t_start, duration)


def draw_incidents(
    config: IncidentConfig,
    net: NetworkModel,
    rng: np.random.Generator,
    warmup: float,
    horizon: float,
) -> list[Incident]:
    if config.mode == "none":
        return []
    if config.mode == "fixed":
        out = []
        for inc in config.incidents:
            inc = Incident.from_dict(inc.to_dict())
            inc.validate(net, warmup)
            out.append(inc)
        return out
    return [sample_incident(config, net, rng, warmup, horizon) for _ in range(config.count)]


def deploy_incident(state, incident: Incident) -> None:
    """Block the incident lanes with IC vehicles, teleporting anything in the way."""
    if incident.state != "pending":
        return
    p = incident.position
    for lane in incident.lanes:
        for v in list(state.lane_vehicles(incident.edge, lane)):
            if v.is_ic:
                continue
            if v.pos > p - CLEARANCE_HALF_WIDTH and v.pos - v.length < p + CLEARANCE_HALF_WIDTH:
                state.teleport(v, "incident", min_rear=p + CLEARANCE_HALF_WIDTH)
        vid = state.add_ic_vehicle(incident.edge, lane, p + IC_LENGTH / 2.0, IC_LENGTH)
        incident.ic_vehicles.append(vid)
    incident.state = "active"
    state.on_incident_change()


def clear_incident(state, incident: Incident) -> None:
    if incident.state != "active":
        return
    for vid in incident.ic_vehicles:
        state.remove_ic_vehicle(vid)
    incident.state = "cleared"
    state.on_incident_change()
