"""Scenario fixtures and scripted-vehicle placement shared by the simulation tests."""

from trex.netmodel import DEFAULT_DRIVER_MIX
from trex.simcore import Vehicle


def place(sim, vid, route, lane=0, pos=0.0, speed=0.0):
    """Put a scripted vehicle directly on ``route[0]`` and account for it as inserted."""
    v = Vehicle(vid, list(route), DEFAULT_DRIVER_MIX[0], sim.cfg.length, sim.cfg.accel, sim.cfg.decel)
    v.lane = lane
    v.pos = pos
    v.speed = speed
    v.depart = sim.t
    v.edge_entry = sim.t
    v.visited.append(route[0])
    sim.vehicles[vid] = v
    sim._insert_sorted(v)
    sim.inserted += 1
    return v


ACCEPTANCE_LINES: dict[int, str] = {}


def report(n: int, ok: bool, detail: str) -> None:
    """Record and print one pass/fail line for acceptance criterion ``n``."""
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES[n] = line
    print(line)
