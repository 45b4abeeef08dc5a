"""Command line entry point: ``trex run|train|eval|transfer|metrics|grid``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiment
from .control import CONTROLLERS, OBS_KINDS, REWARD_KINDS, AgentConfig
from .metrics import MetricError, curve_report, read_curve
from .scenario import ScenarioError, grid_scenario, load_scenario, save_scenario
from .incidents import IncidentConfig
from .simcore import SimConfig


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--seed", type=int, default=None, help="single master seed")
    p.add_argument("--seeds", type=int, nargs="+", default=None, help="list of master seeds")
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--controller", choices=CONTROLLERS, default="fixed")
    p.add_argument("--obs", choices=OBS_KINDS, default="pressure")
    p.add_argument("--reward", choices=REWARD_KINDS, default="queue-wait")
    p.add_argument("--incidents", default="scenario", help="on, off, or a JSON file of incidents (default: as in scenario)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trace", action="store_true", help="write per-step JSON-lines event logs")
    p.add_argument("--jobs", type=int, default=1, help="worker processes across seeds")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--eps-decay", type=int, default=None, help="episodes over which exploration decays (default: half the episodes)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trex", description="Signal control under incidents: simulation and experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate episodes and write KPI rows")
    _common(p)

    p = sub.add_parser("train", help="train tabular Q-learning agents")
    _common(p)
    p.set_defaults(controller="qlearn")

    p = sub.add_parser("eval", help="zero-shot evaluation over base/incident train-test combinations")
    _common(p)
    p.set_defaults(controller="qlearn")
    p.add_argument("--checkpoint", default=None, help="agent trained without incidents")
    p.add_argument("--checkpoint-incident", default=None, help="agent trained with incidents (defaults to --checkpoint)")

    p = sub.add_parser("transfer", help="train without incidents, then continue with incidents")
    _common(p)
    p.set_defaults(controller="qlearn")

    p = sub.add_parser("metrics", help="robustness metrics of a learning curve")
    p.add_argument("--curve", required=True)
    p.add_argument("--baseline", default=None)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--out", default=None, help="JSON report path (stdout when omitted)")

    p = sub.add_parser("grid", help="write a grid scenario file")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--rate", type=float, required=True, help="total demand veh/h")
    p.add_argument("--lanes", type=int, default=2)
    p.add_argument("--length", type=float, default=200.0)
    p.add_argument("--horizon", type=float, default=3600.0)
    p.add_argument("--incident-count", type=int, default=0, help="random incidents per episode (0: none)")
    p.add_argument("--id", default=None)
    p.add_argument("--out", required=True)
    return parser


def _plan(args, kind: str) -> experiment.ExperimentPlan:
    seeds = args.seeds if args.seeds is not None else [args.seed if args.seed is not None else 0]
    decay = args.eps_decay if args.eps_decay is not None else max(1, args.episodes // 2)
    return experiment.ExperimentPlan(
        kind=kind,
        controller=args.controller,
        obs=args.obs,
        reward=args.reward,
        seeds=list(seeds),
        episodes=args.episodes,
        incidents=args.incidents,
        out=args.out,
        trace=args.trace,
        jobs=args.jobs,
        agent=AgentConfig(gamma=args.gamma, alpha=args.alpha, eps_decay_episodes=decay),
    )


def _cmd_metrics(args) -> int:
    curve = read_curve(args.curve)
    base = read_curve(args.baseline) if args.baseline else None
    report = curve_report(curve, args.epsilon, base)
    text = json.dumps(report, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_grid(args) -> int:
    inc = IncidentConfig(mode="random", count=args.incident_count) if args.incident_count else IncidentConfig()
    sc = grid_scenario(
        args.rows, args.cols, args.rate, args.id, args.lanes, args.length, incidents=inc, sim=SimConfig(horizon=args.horizon)
    )
    save_scenario(sc, args.out)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "metrics":
            return _cmd_metrics(args)
        if args.command == "grid":
            return _cmd_grid(args)
        scenario = load_scenario(args.scenario)
        plan = _plan(args, args.command)
        if args.command == "run":
            experiment.run(scenario, plan)
        elif args.command == "train":
            experiment.train(scenario, plan)
        elif args.command == "eval":
            if plan.controller == "qlearn" and not args.checkpoint:
                raise ValueError("eval with qlearn needs --checkpoint")
            experiment.run_eval(scenario, plan, args.checkpoint, args.checkpoint_incident)
        elif args.command == "transfer":
            report = experiment.transfer(scenario, plan)
            sys.stdout.write(json.dumps(report, indent=1, sort_keys=True) + "\n")
    except (ScenarioError, MetricError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"trex: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
