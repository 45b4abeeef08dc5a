"""Per-intersection observations, rewards, baseline policies and a tabular Q-learner.

Counting conventions shared by every builder:

* approaching: non-IC vehicles within ``approach_horizon`` metres of the
  lane's stop line, moving or not;
* stopped: non-IC vehicles anywhere on the lane with speed < 0.1 m/s;
* queue: vehicles that are approaching or stopped (each counted once).

Movement pressure aggregates lanes per (incoming edge, outgoing edge) link:
the queue on incoming lanes serving the link minus the queue on the
outgoing lanes those movements feed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .simcore import STOPPED_SPEED

PRESSURE_SLOTS = 12
OBS_KINDS = ("lane-feature", "pressure", "wave", "region")
REWARD_KINDS = ("delay-delta", "neg-pressure", "queue-wait")
CONTROLLERS = ("fixed", "random", "max-pressure", "greedy", "qlearn")
QUEUE_BUCKETS = (0, 1, 3, 6)  # lower bounds of {0, 1-2, 3-5, 6+}
WAIT_WEIGHT = 0.1
COLOR_CODE = {"green": 1.0, "yellow": 0.5, "red": 0.0}


# ---------------------------------------------------------------- counting


@dataclass(frozen=True)
class LaneCounts:
    approaching: int
    stopped: int
    queue: int
    waiting: float  # accumulated waiting of vehicles currently stopped
    mean_speed: float  # over approaching vehicles, 0 when none
    head_wait: float  # current waiting time of the front vehicle


def lane_counts(sim, lane: tuple[str, int]) -> LaneCounts:
    edge = sim.net.edges[lane[0]]
    horizon = edge.length - sim.cfg.approach_horizon
    approaching = stopped = queue = 0
    waiting = 0.0
    speed_sum = 0.0
    head_wait = None
    for v in sim.lanes[lane]:
        if v.is_ic:
            continue
        if head_wait is None:
            head_wait = v.cur_wait
        near = v.pos >= horizon
        halted = v.speed < STOPPED_SPEED
        if near:
            approaching += 1
            speed_sum += v.speed
        if halted:
            stopped += 1
            waiting += v.cur_wait
        if near or halted:
            queue += 1
    mean_speed = speed_sum / approaching if approaching else 0.0
    return LaneCounts(approaching, stopped, queue, waiting, mean_speed, head_wait or 0.0)


def _check_node(sim, node: str) -> None:
    if node not in sim.net.intersections:
        raise KeyError(f"unknown intersection {node!r}")


@dataclass(frozen=True)
class IntersectionLayout:
    """Static lookup tables for one signalized node."""

    node: str
    in_lanes: tuple[tuple[str, int], ...]
    in_edges: tuple[str, ...]
    links: tuple[tuple[str, str], ...]  # (incoming edge, outgoing edge), sorted
    link_in: tuple[tuple[tuple[str, int], ...], ...]
    link_out: tuple[tuple[tuple[str, int], ...], ...]
    phase_links: tuple[tuple[int, ...], ...]  # link indices per phase
    phase_lanes: tuple[tuple[tuple[str, int], ...], ...]  # incoming lanes served per phase
    lane_movements: Mapping[tuple[str, int], tuple[str, ...]]

    @property
    def n_phases(self) -> int:
        return len(self.phase_links)


def build_layout(net, node: str) -> IntersectionLayout:
    spec = net.intersections[node]
    moves = [net.movements[m] for m in spec.movement_ids]
    links = sorted({(m.from_edge, m.to_edge) for m in moves})
    if len(links) > PRESSURE_SLOTS:
        raise ValueError(f"intersection {node!r} has {len(links)} links, more than {PRESSURE_SLOTS} pressure slots")
    link_index = {lk: i for i, lk in enumerate(links)}
    link_in = [sorted({m.in_lane for m in moves if (m.from_edge, m.to_edge) == lk}) for lk in links]
    link_out = [sorted({m.out_lane for m in moves if (m.from_edge, m.to_edge) == lk}) for lk in links]
    phase_links = []
    phase_lanes = []
    for phase in spec.phases:
        ms = [net.movements[m] for m in phase]
        phase_links.append(tuple(sorted({link_index[(m.from_edge, m.to_edge)] for m in ms})))
        phase_lanes.append(tuple(sorted({m.in_lane for m in ms})))
    in_lanes = tuple(net.incoming_lanes(node))
    lane_moves: dict[tuple[str, int], tuple[str, ...]] = {}
    for ln in in_lanes:
        lane_moves[ln] = tuple(sorted(m.id for m in moves if m.in_lane == ln))
    return IntersectionLayout(
        node,
        in_lanes,
        tuple(sorted(net.in_edges[node])),
        tuple(links),
        tuple(tuple(x) for x in link_in),
        tuple(tuple(x) for x in link_out),
        tuple(phase_links),
        tuple(phase_lanes),
        lane_moves,
    )


def layouts(net) -> dict[str, IntersectionLayout]:
    return {n: build_layout(net, n) for n in sorted(net.intersections)}


# ---------------------------------------------------------------- observations


@dataclass
class LaneFeatureObs:
    lanes: list[tuple[str, int]]
    signal: list[float]
    approaching: list[int]
    stopped: list[int]
    waiting: list[float]
    avg_stop_time: list[float]
    avg_speed: list[float]

    def vector(self) -> list[float]:
        out: list[float] = []
        for i in range(len(self.lanes)):
            out += [self.signal[i], self.approaching[i], self.stopped[i], self.waiting[i], self.avg_stop_time[i], self.avg_speed[i]]
        return out


@dataclass
class PressureObs:
    phase: int
    pressures: list[float]  # always PRESSURE_SLOTS entries

    def vector(self) -> list[float]:
        return [float(self.phase)] + list(self.pressures)


@dataclass
class WaveObs:
    lanes: list[tuple[str, int]]
    approaching: list[int]
    head_wait: list[float]
    region: dict[str, dict[str, int]] | None = None

    def vector(self) -> list[float]:
        return [float(x) for x in self.approaching] + list(self.head_wait)


def _lane_color(sim, layout: IntersectionLayout, lane) -> float:
    colors = [sim.movement_color(m, layout.node) for m in layout.lane_movements[lane]]
    if not colors:
        return 0.0
    return max(COLOR_CODE[c] for c in colors)


def lane_feature_obs(sim, layout: IntersectionLayout) -> LaneFeatureObs:
    obs = LaneFeatureObs(list(layout.in_lanes), [], [], [], [], [], [])
    for ln in layout.in_lanes:
        c = lane_counts(sim, ln)
        total, n = sim.lane_stops[ln]
        obs.signal.append(_lane_color(sim, layout, ln))
        obs.approaching.append(c.approaching)
        obs.stopped.append(c.stopped)
        obs.waiting.append(c.waiting)
        obs.avg_stop_time.append(total / n if n else 0.0)
        obs.avg_speed.append(c.mean_speed)
    return obs


def movement_pressures(sim, layout: IntersectionLayout, cache: dict | None = None) -> list[float]:
    cache = {} if cache is None else cache

    def q(ln):
        if ln not in cache:
            cache[ln] = lane_counts(sim, ln).queue
        return cache[ln]

    out = [0.0] * PRESSURE_SLOTS
    for i in range(len(layout.links)):
        out[i] = float(sum(q(ln) for ln in layout.link_in[i]) - sum(q(ln) for ln in layout.link_out[i]))
    return out


def pressure_obs(sim, layout: IntersectionLayout) -> PressureObs:
    return PressureObs(sim.signals[layout.node].phase, movement_pressures(sim, layout))


def _direction(net, edge: str) -> str:
    h = math.degrees(net.heading(edge)) % 360.0
    return ("E", "N", "W", "S")[int(((h + 45.0) % 360.0) // 90.0)]


def region_flows(sim, regions: Mapping[str, Sequence[str]]) -> dict[str, dict[str, int]]:
    """Vehicles on each region's boundary edges, summed by travel direction."""
    out = {}
    for name in sorted(regions):
        counts = {"N": 0, "S": 0, "E": 0, "W": 0}
        for e in regions[name]:
            d = _direction(sim.net, e)
            for k in range(sim.net.edges[e].lanes):
                counts[d] += sum(1 for v in sim.lanes[(e, k)] if not v.is_ic)
        out[name] = counts
    return out


def wave_obs(sim, layout: IntersectionLayout, regions: Mapping[str, Sequence[str]] | None = None) -> WaveObs:
    obs = WaveObs(list(layout.in_lanes), [], [])
    for ln in layout.in_lanes:
        c = lane_counts(sim, ln)
        obs.approaching.append(c.approaching)
        obs.head_wait.append(c.head_wait)
    if regions:
        obs.region = region_flows(sim, regions)
    return obs


def build_observation(sim, node: str, kind: str, layout: IntersectionLayout | None = None):
    _check_node(sim, node)
    layout = layout or build_layout(sim.net, node)
    if kind == "lane-feature":
        return lane_feature_obs(sim, layout)
    if kind == "pressure":
        return pressure_obs(sim, layout)
    if kind == "wave":
        return wave_obs(sim, layout)
    if kind == "region":
        return wave_obs(sim, layout, sim.cfg.regions or {})
    raise ValueError(f"unknown observation kind {kind!r}")


# ---------------------------------------------------------------- rewards


def lane_delay(sim, lanes: Sequence[tuple[str, int]]) -> float:
    """Delay accrued in one second by vehicles on ``lanes``: sum of (1 - v / v_max)."""
    total = 0.0
    for ln in lanes:
        vmax = sim.net.edges[ln[0]].speed
        for v in sim.lanes[ln]:
            if not v.is_ic:
                total += 1.0 - v.speed / vmax
    return total


class DelayTracker:
    """Delay accumulated on each intersection's incoming lanes since the last decision."""

    def __init__(self, layouts_: Mapping[str, IntersectionLayout]):
        self.layouts = layouts_
        self.current = {n: 0.0 for n in layouts_}
        self.previous = {n: 0.0 for n in layouts_}

    def accumulate(self, sim) -> None:
        for n, lay in self.layouts.items():
            self.current[n] += lane_delay(sim, lay.in_lanes)

    def close_period(self, node: str) -> float:
        """Reward for the period just ended; starts a fresh accumulation."""
        r = self.previous[node] - self.current[node]
        self.previous[node] = self.current[node]
        self.current[node] = 0.0
        return r


def compute_reward(sim, node: str, kind: str, layout: IntersectionLayout | None = None, delay: DelayTracker | None = None) -> float:
    _check_node(sim, node)
    layout = layout or build_layout(sim.net, node)
    if kind == "neg-pressure":
        return -sum(movement_pressures(sim, layout))
    if kind == "queue-wait":
        q = w = 0.0
        for ln in layout.in_lanes:
            c = lane_counts(sim, ln)
            q += c.queue
            w += c.waiting
        return -(q + WAIT_WEIGHT * w)
    if kind == "delay-delta":
        if delay is None:
            raise ValueError("delay-delta reward needs a DelayTracker")
        return delay.close_period(node)
    raise ValueError(f"unknown reward kind {kind!r}")


# ---------------------------------------------------------------- policies


def _argmax(values: Sequence[float]) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def phase_pressures(obs: PressureObs, phase_links: Sequence[Sequence[int]]) -> list[float]:
    return [sum(obs.pressures[i] for i in links) for links in phase_links]


def max_pressure_policy(obs: PressureObs, phase_links: Sequence[Sequence[int]]) -> int:
    """Phase with the largest summed movement pressure; ties go to the lowest index."""
    return _argmax(phase_pressures(obs, phase_links))


def greedy_policy(obs: WaveObs, phase_lanes: Sequence[Sequence[tuple[str, int]]]) -> int:
    """Phase serving the most approaching vehicles; ties go to the lowest index."""
    count = dict(zip(obs.lanes, obs.approaching))
    return _argmax([sum(count.get(ln, 0) for ln in lanes) for lanes in phase_lanes])


def fixed_time_policy(t: float, cycle: Sequence[float]) -> int:
    if not cycle or any(d <= 0 for d in cycle):
        raise ValueError("fixed-time cycle durations must be > 0")
    r = t % sum(cycle)
    for i, d in enumerate(cycle):
        if r < d:
            return i
        r -= d
    return len(cycle) - 1


def random_policy(rng: np.random.Generator, n_phases: int) -> int:
    return int(rng.integers(n_phases))


def apply_phase(sim, node: str, target: int) -> bool:
    """Hold or switch the signal; a switch starts a yellow interval for dropped movements."""
    _check_node(sim, node)
    return sim.set_phase(node, target)


# ---------------------------------------------------------------- Q-learning


def queue_bucket(n: int) -> int:
    b = 0
    for i, lo in enumerate(QUEUE_BUCKETS):
        if n >= lo:
            b = i
    return b


def discretize(sim, layout: IntersectionLayout) -> tuple[int, ...]:
    """Queue bucket per incoming approach plus the current phase."""
    per_edge = {e: 0 for e in layout.in_edges}
    for ln in layout.in_lanes:
        per_edge[ln[0]] += lane_counts(sim, ln).queue
    return tuple(queue_bucket(per_edge[e]) for e in layout.in_edges) + (sim.signals[layout.node].phase,)


@dataclass
class AgentConfig:
    gamma: float = 0.9
    alpha: float = 0.1
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_episodes: int = 50
    decision_period: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("agent.gamma: must be in (0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("agent.alpha: must be in (0, 1]")
        if not (0.0 <= self.eps_end <= 1.0 and 0.0 <= self.eps_start <= 1.0):
            raise ValueError("agent.eps: must be in [0, 1]")
        if self.eps_decay_episodes < 0:
            raise ValueError("agent.eps_decay_episodes: must be >= 0")
        if self.decision_period < 1 or self.decision_period != int(self.decision_period):
            raise ValueError("agent.decision_period: must be a whole number of 1 s steps")


@dataclass
class QAgent:
    """Tabular Q-function for one intersection."""

    n_actions: int
    table: dict[tuple, np.ndarray] = field(default_factory=dict)

    def q(self, s: tuple) -> np.ndarray:
        if s not in self.table:
            self.table[s] = np.zeros(self.n_actions)
        return self.table[s]

    def act(self, s: tuple, epsilon: float, rng: np.random.Generator) -> int:
        if rng.random() < epsilon:
            return int(rng.integers(self.n_actions))
        return _argmax(list(self.q(s)))

    def update(self, s: tuple, a: int, r: float, s2: tuple, alpha: float, gamma: float) -> None:
        q = self.q(s)
        target = r + gamma * float(np.max(self.q(s2)))
        q[a] += alpha * (target - q[a])


def q_update(agent: QAgent, s: tuple, a: int, r: float, s2: tuple, alpha: float = 0.1, gamma: float = 0.9) -> QAgent:
    agent.update(s, a, r, s2, alpha, gamma)
    return agent


class QLearner:
    """Independent tabular agents, one per intersection, with linear epsilon decay."""

    def __init__(self, n_actions: Mapping[str, int], config: AgentConfig | None = None):
        self.config = config or AgentConfig()
        self.agents = {n: QAgent(k) for n, k in sorted(n_actions.items())}
        self.episodes_seen = 0
        self.frozen = False

    def epsilon(self, episode: int | None = None) -> float:
        if self.frozen:
            return 0.0
        c = self.config
        k = self.episodes_seen if episode is None else episode
        if c.eps_decay_episodes == 0:
            return c.eps_end
        frac = min(1.0, k / c.eps_decay_episodes)
        return c.eps_start + (c.eps_end - c.eps_start) * frac

    def to_dict(self) -> dict:
        return {
            "config": self.config.__dict__,
            "episodes_seen": self.episodes_seen,
            "agents": {
                n: {
                    "n_actions": a.n_actions,
                    "table": {",".join(map(str, s)): [float(x) for x in q] for s, q in sorted(a.table.items())},
                }
                for n, a in self.agents.items()
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "QLearner":
        learner = cls({n: a["n_actions"] for n, a in d["agents"].items()}, AgentConfig(**d["config"]))
        learner.episodes_seen = int(d["episodes_seen"])
        for n, a in d["agents"].items():
            ag = learner.agents[n]
            for key, vals in a["table"].items():
                s = tuple(int(x) for x in key.split(",")) if key else ()
                ag.table[s] = np.array(vals, dtype=float)
        return learner

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "QLearner":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"checkpoint not found: {p}")
        return cls.from_dict(json.loads(p.read_text()))

    def check_compatible(self, net) -> None:
        for n, spec in net.intersections.items():
            if n not in self.agents:
                raise ValueError(f"checkpoint has no agent for intersection {n!r}")
            if self.agents[n].n_actions != len(spec.phases):
                raise ValueError(f"checkpoint agent {n!r} has {self.agents[n].n_actions} actions, scenario has {len(spec.phases)} phases")
        extra = sorted(set(self.agents) - set(net.intersections))
        if extra:
            raise ValueError(f"checkpoint agent {extra[0]!r} has no intersection in the scenario")


# ---------------------------------------------------------------- controller


class SignalController:
    """Drives every intersection of a simulation once per decision period."""

    def __init__(
        self,
        kind: str,
        net,
        obs_kind: str = "pressure",
        reward_kind: str = "queue-wait",
        learner: QLearner | None = None,
        learn: bool = True,
    ):
        if kind not in CONTROLLERS:
            raise ValueError(f"unknown controller {kind!r}")
        if obs_kind not in OBS_KINDS:
            raise ValueError(f"unknown observation kind {obs_kind!r}")
        if reward_kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward kind {reward_kind!r}")
        self.kind = kind
        self.obs_kind = obs_kind
        self.reward_kind = reward_kind
        self.layouts = layouts(net)
        if kind == "qlearn" and learner is None:
            learner = QLearner({n: lay.n_phases for n, lay in self.layouts.items()})
        self.learner = learner
        self.learn = learn
        self._last: dict[str, tuple[tuple, int]] = {}
        self.delay: DelayTracker | None = None
        self.transitions = 0
        self.reward_sum = 0.0

    def reset(self, sim) -> None:
        self._last = {}
        self.delay = DelayTracker(self.layouts) if self.reward_kind == "delay-delta" else None
        self.reward_sum = 0.0

    def per_step(self, sim) -> None:
        if self.delay is not None:
            self.delay.accumulate(sim)

    def decide(self, sim, epsilon: float = 0.0) -> dict[str, int]:
        actions = {}
        rng = sim.rng["control"]
        for node, lay in self.layouts.items():
            if self.kind == "fixed":
                spec = sim.net.intersections[node]
                cycle = spec.fixed_cycle or tuple(30.0 for _ in spec.phases)
                a = fixed_time_policy(sim.t, cycle)
            elif self.kind == "random":
                a = random_policy(rng, lay.n_phases)
            elif self.kind == "max-pressure":
                a = max_pressure_policy(pressure_obs(sim, lay), lay.phase_links)
            elif self.kind == "greedy":
                a = greedy_policy(wave_obs(sim, lay), lay.phase_lanes)
            else:
                a = self._q_step(sim, node, lay, epsilon, rng)
            apply_phase(sim, node, a)
            actions[node] = a
        return actions

    def _q_step(self, sim, node, lay, epsilon, rng) -> int:
        agent = self.learner.agents[node]
        s = discretize(sim, lay)
        if node in self._last:
            s_prev, a_prev = self._last[node]
            r = compute_reward(sim, node, self.reward_kind, lay, self.delay)
            self.reward_sum += r
            self.transitions += 1
            if self.learn:
                c = self.learner.config
                agent.update(s_prev, a_prev, r, s, c.alpha, c.gamma)
        a = agent.act(s, epsilon, rng)
        self._last[node] = (s, a)
        return a
