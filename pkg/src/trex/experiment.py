"""Episode runner and the batch experiments built on it.

Every output row carries (scenario, seed, episode, phase) and is a pure
function of the scenario, the plan and the seed, so rerunning a plan
reproduces the output directory byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .control import CONTROLLERS, AgentConfig, QLearner, SignalController
from .incidents import Incident, IncidentConfig
from .metrics import EpisodeStats, episode_kpis, pdi
from .scenario import Scenario, scenario_to_dict
from .simcore import Simulation

EVAL_EPISODE_OFFSET = 100_000  # keeps evaluation draws apart from training draws
BEST_WINDOW = 10
JUMP_PRE = 10
JUMP_POST = 5


@dataclass
class ExperimentPlan:
    kind: str = "run"
    controller: str = "fixed"
    obs: str = "pressure"
    reward: str = "queue-wait"
    seeds: list[int] = field(default_factory=lambda: [0])
    episodes: int = 1
    incidents: str = "scenario"  # scenario, on, off, or a path
    out: str = "out"
    trace: bool = False
    jobs: int = 1
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("plan: episodes must be >= 1")
        if not self.seeds:
            raise ValueError("plan: seeds must be nonempty")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"plan: unknown controller {self.controller!r}")

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in ("agent", "jobs", "out")}
        d["agent"] = dict(self.agent.__dict__)
        return d


@dataclass
class EpisodeResult:
    stats: EpisodeStats
    episode: int
    phase: str
    incidents: list[dict]


def resolve_incidents(scenario: Scenario, toggle: str) -> Scenario:
    """Scenario with its incident section set by an ``on|off|<file>`` toggle."""
    if toggle == "scenario":
        return scenario
    if toggle == "off":
        return scenario.with_incidents(IncidentConfig(mode="none"))
    if toggle == "on":
        cfg = scenario.incidents
        if cfg.mode == "none":
            cfg = replace(cfg, mode="random")
        return scenario.with_incidents(cfg)
    path = Path(toggle)
    if not path.is_file():
        raise FileNotFoundError(f"incident file not found: {path}")
    data = json.loads(path.read_text())
    items = data["incidents"] if isinstance(data, dict) else data
    incs = [Incident.from_dict(x) for x in items]
    for inc in incs:
        inc.validate(scenario.network, scenario.sim.warmup)
    return scenario.with_incidents(IncidentConfig(mode="fixed", incidents=incs))


def run_episode(
    scenario: Scenario,
    seed: int,
    episode: int = 0,
    controller: SignalController | None = None,
    epsilon: float = 0.0,
    trace_path: Path | None = None,
    phase: str = "run",
) -> EpisodeResult:
    """Simulate one episode under ``controller`` (fixed-time when omitted)."""
    controller = controller or SignalController("fixed", scenario.network)
    trace = open(trace_path, "w") if trace_path is not None else None
    try:
        sim = Simulation(scenario, seed, episode, trace=trace)
        controller.reset(sim)
        period = int(scenario.sim.decision_period)
        horizon = scenario.sim.horizon
        while sim.t < horizon:
            if int(sim.t) % period == 0:
                controller.decide(sim, epsilon)
            sim.step()
            controller.per_step(sim)
    finally:
        if trace is not None:
            trace.close()
    trips = sim.trip_log()
    avg_queue = sim.queue_sum / sim.queue_samples if sim.queue_samples else 0.0
    if trips:
        stats = episode_kpis(trips, horizon, scenario.sim.warmup, avg_queue, seed, scenario.id, sim.teleport_count)
    else:
        stats = EpisodeStats(scenario.id, seed, avg_queue, 0.0, 0.0, 0.0, 0, sim.teleport_count)
    return EpisodeResult(stats, episode, phase, [i.to_dict() for i in sim.incidents])


# ---------------------------------------------------------------- output


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(round(x, 9))
    return str(x)


def write_episodes(path: Path, results: Sequence[EpisodeResult]) -> None:
    cols = ["scenario", "seed", "episode", "phase"] + [c for c in EpisodeStats.columns() if c not in ("scenario", "seed")]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in results:
            row = r.stats.row()
            row.update(episode=r.episode, phase=r.phase)
            w.writerow([_fmt(row[c]) for c in cols])


def write_curve(path: Path, curve: Sequence[tuple[int, float, str]]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "indicator", "phase"])
        for ep, val, ph in curve:
            w.writerow([ep, _fmt(float(val)), ph])


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def manifest(scenario: Scenario, plan: ExperimentPlan, results: Sequence[EpisodeResult], extra: dict | None = None) -> dict:
    out = {
        "scenario": scenario_to_dict(scenario),
        "plan": plan.to_dict(),
        "incidents": [
            {"seed": r.stats.seed, "episode": r.episode, "phase": r.phase, "incidents": r.incidents} for r in results
        ],
    }
    if extra:
        out.update(extra)
    return out


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*items)))


# ---------------------------------------------------------------- run


def _run_one(scenario, plan: ExperimentPlan, seed: int, episode: int, trace_dir: str | None):
    ctl = SignalController(plan.controller, scenario.network, plan.obs, plan.reward)
    trace = Path(trace_dir) / f"seed{seed}_ep{episode}.jsonl" if trace_dir else None
    eps = 1.0 if plan.controller == "qlearn" else 0.0  # an untrained agent acts at random
    return run_episode(scenario, seed, episode, ctl, eps, trace, "run")


def run(scenario: Scenario, plan: ExperimentPlan) -> list[EpisodeResult]:
    scenario = resolve_incidents(scenario, plan.incidents)
    out = Path(plan.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_dir = None
    if plan.trace:
        trace_dir = out / "trace"
        trace_dir.mkdir(exist_ok=True)
    items = [(scenario, plan, s, e, str(trace_dir) if trace_dir else None) for s in plan.seeds for e in range(plan.episodes)]
    results = _map(_run_one, items, plan.jobs)
    write_episodes(out / "episodes.csv", results)
    write_json(out / "manifest.json", manifest(scenario, plan, results))
    return results


# ---------------------------------------------------------------- train


@dataclass
class TrainResult:
    seed: int
    results: list[EpisodeResult]
    learner: QLearner
    best: dict
    best_window: tuple[int, int]

    @property
    def curve(self) -> list[float]:
        return [r.stats.avg_travel_time for r in self.results]


def train_loop(
    scenario: Scenario,
    plan: ExperimentPlan,
    seed: int,
    learner: QLearner | None = None,
    first_episode: int = 0,
    phase: str = "train",
) -> TrainResult:
    """Train (or continue training) independent Q-agents for ``plan.episodes`` episodes."""
    if plan.controller != "qlearn":
        raise ValueError("training needs a learning controller (qlearn)")
    ctl = SignalController("qlearn", scenario.network, plan.obs, plan.reward, learner=learner)
    if learner is None:
        ctl.learner.config = plan.agent
    learner = ctl.learner
    learner.frozen = False
    results = []
    best_mean = math.inf
    best_state = learner.to_dict()
    best_window = (first_episode, first_episode)
    for k in range(plan.episodes):
        ep = first_episode + k
        eps = learner.epsilon()
        res = run_episode(scenario, seed, ep, ctl, eps, None, phase)
        learner.episodes_seen += 1
        results.append(res)
        window = [r.stats.avg_travel_time for r in results[-BEST_WINDOW:]]
        if len(window) == min(BEST_WINDOW, plan.episodes):
            m = sum(window) / len(window)
            if m < best_mean:
                best_mean = m
                best_state = learner.to_dict()
                best_window = (ep - len(window) + 1, ep)
    return TrainResult(seed, results, learner, best_state, best_window)


def _train_one(scenario, plan, seed):
    return train_loop(scenario, plan, seed)


def train(scenario: Scenario, plan: ExperimentPlan) -> list[TrainResult]:
    scenario = resolve_incidents(scenario, plan.incidents)
    out = Path(plan.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = _map(_train_one, [(scenario, plan, s) for s in plan.seeds], plan.jobs)
    all_results = []
    for tr in runs:
        suffix = f"_seed{tr.seed}" if len(plan.seeds) > 1 else ""
        write_curve(out / f"curve{suffix}.csv", [(r.episode, r.stats.avg_travel_time, r.phase) for r in tr.results])
        write_json(out / f"checkpoint_best{suffix}.json", tr.best)
        write_json(out / f"checkpoint_final{suffix}.json", tr.learner.to_dict())
        all_results += tr.results
    write_episodes(out / "episodes.csv", all_results)
    extra = {"best_windows": {str(tr.seed): list(tr.best_window) for tr in runs}}
    write_json(out / "manifest.json", manifest(scenario, plan, all_results, extra))
    return runs


# ---------------------------------------------------------------- eval


COMBOS = (("base", "base"), ("base", "incident"), ("incident", "incident"), ("incident", "base"))


def evaluate(
    scenario: Scenario,
    plan: ExperimentPlan,
    learner: QLearner | None,
    test: str,
) -> list[EpisodeResult]:
    """Frozen-policy episodes on the base (``test='base'``) or incident variant."""
    sc = resolve_incidents(scenario, "off" if test == "base" else "on")
    results = []
    for seed in plan.seeds:
        for k in range(plan.episodes):
            if plan.controller == "qlearn":
                frozen = QLearner.from_dict(learner.to_dict())
                frozen.frozen = True
                ctl = SignalController("qlearn", sc.network, plan.obs, plan.reward, learner=frozen, learn=False)
            else:
                ctl = SignalController(plan.controller, sc.network, plan.obs, plan.reward)
            results.append(run_episode(sc, seed, EVAL_EPISODE_OFFSET + k, ctl, 0.0, None, f"eval-{test}"))
    return results


def eval_combinations(
    scenario: Scenario,
    plan: ExperimentPlan,
    base_learner: QLearner | None = None,
    incident_learner: QLearner | None = None,
) -> tuple[list[dict], list[EpisodeResult]]:
    """Mean travel time for each (train, test) pair plus the degradation index per training condition."""
    if plan.controller == "qlearn":
        if base_learner is None:
            raise ValueError("qlearn evaluation needs a checkpoint")
        incident_learner = incident_learner or base_learner
        for lrn in (base_learner, incident_learner):
            lrn.check_compatible(scenario.network)
    perf = {}
    all_results = []
    for train_c, test_c in COMBOS:
        learner = base_learner if train_c == "base" else incident_learner
        res = evaluate(scenario, plan, learner, test_c)
        for r in res:
            r.phase = f"{train_c}-{test_c}"
        all_results += res
        perf[(train_c, test_c)] = statistics.fmean(r.stats.avg_travel_time for r in res)
    rows = []
    for train_c, test_c in COMBOS:
        same = perf[(train_c, train_c)]
        v = perf[(train_c, test_c)]
        rows.append(
            {
                "method": plan.controller,
                "train": train_c,
                "test": test_c,
                "avg_travel_time": v,
                "pdi": pdi(same, v) if same != 0 else math.nan,
            }
        )
    return rows, all_results


def write_pdi(path: Path, rows: Sequence[dict]) -> None:
    cols = ["method", "train", "test", "avg_travel_time", "pdi"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def run_eval(scenario: Scenario, plan: ExperimentPlan, checkpoint: str | None, checkpoint_incident: str | None) -> list[dict]:
    base = QLearner.load(checkpoint) if checkpoint else None
    inc = QLearner.load(checkpoint_incident) if checkpoint_incident else None
    rows, results = eval_combinations(scenario, plan, base, inc)
    out = Path(plan.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pdi(out / "pdi.csv", rows)
    write_episodes(out / "episodes.csv", results)
    extra = {"checkpoints": {"base": checkpoint, "incident": checkpoint_incident or checkpoint}}
    write_json(out / "manifest.json", manifest(scenario, plan, results, extra))
    return rows


# ---------------------------------------------------------------- transfer


def indicator_jump(curve: Sequence[float], boundary: int, pre: int = JUMP_PRE, post: int = JUMP_POST) -> dict:
    """Mean of the first ``post`` points after ``boundary`` minus the mean of the last ``pre`` before it."""
    before = list(curve[max(0, boundary - pre):boundary])
    after = list(curve[boundary:boundary + post])
    if len(before) < 2 or not after:
        raise ValueError("indicator_jump: not enough points around the boundary")
    sd = statistics.stdev(before)
    jump = statistics.fmean(after) - statistics.fmean(before)
    return {"jump": jump, "pre_std": sd, "detected": jump > 2.0 * sd}


def transfer_loop(scenario: Scenario, plan: ExperimentPlan, seed: int, phase2: str = "on") -> tuple[list[EpisodeResult], QLearner]:
    base = resolve_incidents(scenario, "off")
    shifted = resolve_incidents(scenario, phase2)
    first = train_loop(base, plan, seed, phase="base")
    second = train_loop(shifted, plan, seed, learner=first.learner, first_episode=plan.episodes, phase="incident")
    return first.results + second.results, second.learner


def _transfer_one(scenario, plan, seed):
    return seed, *transfer_loop(scenario, plan, seed)


def transfer(scenario: Scenario, plan: ExperimentPlan) -> dict:
    out = Path(plan.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = _map(_transfer_one, [(scenario, plan, s) for s in plan.seeds], plan.jobs)
    report = {}
    all_results = []
    for seed, results, learner in runs:
        suffix = f"_seed{seed}" if len(plan.seeds) > 1 else ""
        curve = [(r.episode, r.stats.avg_travel_time, r.phase) for r in results]
        write_curve(out / f"curve{suffix}.csv", curve)
        write_json(out / f"checkpoint_final{suffix}.json", learner.to_dict())
        report[str(seed)] = indicator_jump([c[1] for c in curve], plan.episodes)
        all_results += results
    write_episodes(out / "episodes.csv", all_results)
    write_json(out / "transfer.json", {"boundary": plan.episodes, "seeds": report})
    write_json(out / "manifest.json", manifest(scenario, plan, all_results))
    return report
