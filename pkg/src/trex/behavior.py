"""Driver response to incidents.

Awareness is built from four information channels (radio broadcasts, roadside
message signs, online sources and direct observation) whose per-edge
probabilities are combined through their complements.  Aware drivers then
decide to reroute with a binary logit over expected gain and avoided loss.
Close to an incident, drivers slow down once inside their stopping sight
distance.

All times are in seconds and distances in metres unless a name says
otherwise.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

from .routing import CostToGo, NoPathError, cost_to_go, shortest_path

CHANNELS = ("fti", "fpi", "os", "ob")

REACTION_TIME = 2.5  # s
BRAKING_DECEL = 3.4  # m/s^2
INCIDENT_SPEED_CAP = 8.0 / 3.6  # 5 mph


@dataclass
class ICMConfig:
    """Information channels, rerouting logit and routing algorithm."""

    # channel switches
    fti: bool = True
    fpi: bool = True
    os: bool = True
    ob: bool = True
    # fixed-time information (radio)
    mu_fti: float = 0.7
    mu_on: float = 0.5
    fti_period: float = 300.0
    # fixed-place information (message signs)
    vms_coverage: float = 0.4
    fpi_offset: float = 600.0
    fpi_range: float = 200.0
    fpi_beta: float = 2.0
    mean_speed: float | None = None  # None: network mean speed limit
    # online sources
    mu_os: float = 0.8
    os_offset: float = 300.0
    os_sigma: float = 600.0
    # observation
    ob_threshold: float = 120.0
    ob_sensitivity: float = 0.5 / 60.0  # per second
    ob_literal: bool = False
    # rerouting logit
    beta_gain: float = 2.5
    beta_loss: float = 2.5
    beta_0: float = -5.0
    routing: str = "dijkstra"
    # overrides used by controlled experiments
    force_aware: bool = False
    force_kappa: float | None = None

    def __post_init__(self):
        for name in ("mu_fti", "mu_on", "vms_coverage", "mu_os"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"icm.{name}: {v} outside [0, 1]")
        if not self.fpi_range > 0:
            raise ValueError("icm.fpi_range: must be > 0")
        if not self.os_sigma > 0:
            raise ValueError("icm.os_sigma: must be > 0")
        if not self.ob_sensitivity >= 0:
            raise ValueError("icm.ob_sensitivity: must be >= 0")
        if not self.fti_period > 0:
            raise ValueError("icm.fti_period: must be > 0")
        if self.routing not in ("dijkstra", "astar", "greedy"):
            raise ValueError(f"icm.routing: unknown algorithm {self.routing!r}")
        if self.force_kappa is not None and not 0.0 <= self.force_kappa <= 1.0:
            raise ValueError("icm.force_kappa: outside [0, 1]")
        for b in ("beta_gain", "beta_loss", "beta_0"):
            if not math.isfinite(getattr(self, b)):
                raise ValueError(f"icm.{b}: must be finite")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ICMConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"icm: unknown field {unknown[0]!r}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def all_off(self) -> bool:
        return not (self.fti or self.fpi or self.os or self.ob or self.force_aware)


def _mid(a: float, b: float, c: float) -> float:
    return sorted((a, b, c))[1]


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


# --------------------------------------------------------------------------
# awareness channels


def fti_broadcasts(t_start: float, t_end: float, period: float) -> list[float]:
    """Radio broadcast times: every ``period`` after the incident starts, while it lasts."""
    out = []
    t = t_start + period
    while t <= t_end:
        out.append(t)
        t += period
    return out


def rho_fti(t: float, broadcasts: Sequence[float], mu_fti: float, mu_on: float) -> float:
    # closed form of mu_fti * mu_on * sum_{i=1..N} (1 - mu_on)^(i-1)
    n = sum(1 for b in broadcasts if b <= t)
    return mu_fti * (1.0 - (1.0 - mu_on) ** n)


def p_fti(t: float, t_e: float, broadcasts: Sequence[float], mu_fti: float = 0.7, mu_on: float = 0.5) -> float:
    """Awareness gained from broadcasts aired while traversing an edge entered at ``t``."""
    return _clamp01(rho_fti(t + t_e, broadcasts, mu_fti, mu_on) - rho_fti(t, broadcasts, mu_fti, mu_on))


def p_fpi(
    distance: float,
    t: float,
    t_start: float,
    t_end: float,
    has_vms: bool,
    t_fpi: float,
    range_: float = 200.0,
    beta: float = 2.0,
    mean_speed: float = 13.89,
) -> float:
    """Message-sign awareness on exiting an edge at ``t``.

    ``distance`` is the network distance from the sign to the incident.  The
    effective distance grows with the time separation from the incident's
    active window, scaled by ``mean_speed``.
    """
    if not has_vms or t < t_fpi or not math.isfinite(distance):
        return 0.0
    ell = distance + mean_speed * abs(_mid(0.0, t_start - t, t_end - t))
    return 1.0 / (1.0 + (ell / range_) ** beta)


def rho_os(t: float, t_os: float, mu_os: float, sigma: float) -> float:
    if t < t_os:
        return 0.0
    return mu_os * (1.0 - math.exp(-((t - t_os) ** 2) / (2.0 * sigma**2)))


def p_os(t: float, t_e: float, t_os: float, mu_os: float = 0.8, sigma: float = 600.0) -> float:
    return _clamp01(rho_os(t + t_e, t_os, mu_os, sigma) - rho_os(t, t_os, mu_os, sigma))


def p_ob(t_e: float, t_typical: float, threshold: float = 120.0, sensitivity: float = 0.5 / 60.0, literal: bool = False) -> float:
    """Awareness from experiencing delay on the edge just traversed.

    The default grows linearly with the delay beyond ``threshold``.  With
    ``literal=True`` the threshold is subtracted after clamping, which can
    go negative; callers must clamp before using it as a probability.
    """
    if literal:
        return _mid(0.0, 1.0, sensitivity * (t_e - t_typical)) - threshold
    return _clamp01(sensitivity * (t_e - t_typical - threshold))


def p_aware(components: Iterable[float]) -> float:
    q = 1.0
    for p in components:
        q *= 1.0 - p
    return 1.0 - q


# --------------------------------------------------------------------------
# rerouting decision


def expected_gain(p: Sequence[float], p_typical: Sequence[float]) -> float:
    """One minus the cosine similarity of actual and typical transition vectors."""
    dot = sum(a * b for a, b in zip(p, p_typical))
    na = math.sqrt(sum(a * a for a in p))
    nb = math.sqrt(sum(b * b for b in p_typical))
    if na == 0.0 or nb == 0.0:
        raise ValueError("expected_gain: zero transition vector")
    return 1.0 - dot / (na * nb)


def avoided_loss(p: Sequence[float], p_typical: Sequence[float], w: Sequence[float]) -> float:
    """Relative change in expected cost-to-go between actual and typical transitions.

    An infinite typical expectation (the planned continuation is cut off)
    yields -1, the limit of the ratio.
    """
    actual = sum(a * x for a, x in zip(p, w) if a > 0)
    typical = sum(b * x for b, x in zip(p_typical, w) if b > 0)
    if typical == 0.0:
        raise ValueError("avoided_loss: typical expected cost is zero")
    if math.isinf(typical):
        return 0.0 if math.isinf(actual) else -1.0
    return (actual - typical) / typical


def reroute_probability(d_gain: float, d_loss: float, beta_gain: float = 2.5, beta_loss: float = 2.5, beta_0: float = -5.0) -> float:
    v = beta_gain * d_gain + beta_loss * d_loss + beta_0
    # numerically stable logistic
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    z = math.exp(v)
    return z / (1.0 + z)


def congestion_probabilities(w: Sequence[float]) -> list[float]:
    """Transition probabilities proportional to 1 / cost-to-go; unreachable options get 0."""
    inv = [0.0 if not math.isfinite(x) else (1.0 / x if x > 0 else math.inf) for x in w]
    if any(math.isinf(v) for v in inv):
        hits = [1.0 if math.isinf(v) else 0.0 for v in inv]
        s = sum(hits)
        return [h / s for h in hits]
    s = sum(inv)
    if s == 0.0:
        return [0.0] * len(w)
    return [v / s for v in inv]


@dataclass
class TransitionProbs:
    options: list[str]
    actual: list[float]
    typical: list[float]
    w: list[float]


def transition_probs(net, w: CostToGo | Mapping[str, float], edge: str, planned_next: str) -> TransitionProbs | None:
    """Actual vs typical next-edge distributions at the end of ``edge``.

    Options are successors from which the destination is reachable under
    ``w``; the planned next edge is always kept so the typical vector is
    well defined.
    """
    values = w.values if isinstance(w, CostToGo) else w
    opts = [f for f in net.successors[edge] if math.isfinite(values[f]) or f == planned_next]
    if planned_next not in opts:
        return None
    ws = [values[f] for f in opts]
    actual = congestion_probabilities(ws)
    typical = [1.0 if f == planned_next else 0.0 for f in opts]
    return TransitionProbs(opts, actual, typical, ws)


def replan_route(
    net,
    route: Sequence[str],
    index: int,
    costs: Mapping[str, float],
    rng: np.random.Generator,
    algo: str = "dijkstra",
    probs: TransitionProbs | None = None,
) -> list[str] | None:
    """New route tail for a vehicle on ``route[index]``.

    The next edge is drawn from the congestion-factor distribution and the
    remainder is a shortest path from it.  Returns the full new route, or
    ``None`` when no feasible continuation exists.
    """
    edge = route[index]
    dest = route[-1]
    if edge == dest or index >= len(route) - 1:
        return None
    if probs is None:
        probs = transition_probs(net, cost_to_go(net, costs, dest), edge, route[index + 1])
    if probs is None or sum(probs.actual) == 0.0:
        return None
    k = int(rng.choice(len(probs.options), p=np.asarray(probs.actual) / sum(probs.actual)))
    nxt = probs.options[k]
    try:
        tail = shortest_path(net, costs, nxt, dest, algo)
    except NoPathError:
        return None
    return list(route[: index + 1]) + tail


# --------------------------------------------------------------------------
# speed adaptation


def ssd(speed_kmh: float) -> float:
    """Stopping sight distance in metres for a speed in km/h."""
    return 0.278 * speed_kmh * REACTION_TIME + 0.039 * speed_kmh**2 / BRAKING_DECEL


def speed_adaptation(distance_to_incident: float, speed_ms: float, already_flagged: bool) -> tuple[float | None, bool]:
    """Speed cap and within-SSD flag for a vehicle upstream of an incident.

    Once flagged the cap holds until the vehicle passes the incident; the
    caller clears the flag there.
    """
    if distance_to_incident < 0:
        return None, False
    if already_flagged or distance_to_incident <= ssd(speed_ms * 3.6):
        return INCIDENT_SPEED_CAP, True
    return None, False


# --------------------------------------------------------------------------
# information environment


def node_distances(net) -> dict[str, dict[str, float]]:
    """All-pairs shortest network distance in metres between nodes."""
    out = {}
    adj: dict[str, list[tuple[str, float]]] = {n: [] for n in net.nodes}
    for e in net.edges.values():
        adj[e.from_node].append((e.to_node, e.length))
    for src in net.nodes:
        dist = {src: 0.0}
        heap = [(0.0, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist.get(u, math.inf):
                continue
            for v, ln in adj[u]:
                nd = d + ln
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        out[src] = dist
    return out


def vms_edges(net, coverage: float, seed: int) -> frozenset[str]:
    """Deterministic pseudo-random subset of edges carrying message signs."""
    ids = sorted(net.edges)
    k = int(round(coverage * len(ids)))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x564D53]))
    chosen = rng.permutation(len(ids))[:k]
    return frozenset(ids[i] for i in sorted(chosen))


class InfoEnvironment:
    """Per-episode awareness evaluator bound to a network and ICM settings."""

    def __init__(self, net, cfg: ICMConfig, seed: int):
        self.net = net
        self.cfg = cfg
        self.vms = vms_edges(net, cfg.vms_coverage, seed)
        self.mean_speed = cfg.mean_speed if cfg.mean_speed is not None else net.mean_speed
        self._dist = node_distances(net)

    def distance_to(self, edge: str, incident) -> float:
        if edge == incident.edge:
            return 0.0
        a = self.net.edges[edge].to_node
        b = self.net.edges[incident.edge].from_node
        return self._dist[a].get(b, math.inf) + incident.position

    def channel_probabilities(self, edge: str, t_entry: float, t_exit: float, incidents) -> dict[str, float]:
        """Per-channel awareness probability for one edge traversal.

        With several incidents a channel's probability is the complement
        product across them.
        """
        cfg = self.cfg
        t_e = t_exit - t_entry
        keep = {c: 1.0 for c in CHANNELS}
        for inc in incidents:
            t_end = inc.t_start + inc.duration
            if cfg.fti:
                b = fti_broadcasts(inc.t_start, t_end, cfg.fti_period)
                keep["fti"] *= 1.0 - p_fti(t_entry, t_e, b, cfg.mu_fti, cfg.mu_on)
            if cfg.fpi:
                keep["fpi"] *= 1.0 - p_fpi(
                    self.distance_to(edge, inc),
                    t_exit,
                    inc.t_start,
                    t_end,
                    edge in self.vms,
                    inc.t_start + cfg.fpi_offset,
                    cfg.fpi_range,
                    cfg.fpi_beta,
                    self.mean_speed,
                )
            if cfg.os:
                keep["os"] *= 1.0 - p_os(t_entry, t_e, inc.t_start + cfg.os_offset, cfg.mu_os, cfg.os_sigma)
        out = {c: 1.0 - keep[c] for c in ("fti", "fpi", "os")}
        if cfg.ob and incidents:
            typical = self.net.edges[edge].free_flow_time
            out["ob"] = _clamp01(p_ob(t_e, typical, cfg.ob_threshold, cfg.ob_sensitivity, cfg.ob_literal))
        else:
            out["ob"] = 0.0
        return out
