"""Episode KPIs and learning-curve robustness metrics.

Every indicator handled here is lower-is-better (travel time, delay), so the
"best" point of a curve is its minimum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence


class MetricError(ValueError):
    pass


@dataclass
class EpisodeStats:
    scenario: str
    seed: int
    avg_queue: float
    avg_travel_time: float
    avg_waiting: float
    avg_delay: float
    reroutes: int
    teleports: int
    vehicles: int = 0
    arrived: int = 0

    def row(self) -> dict:
        return asdict(self)

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def episode_kpis(
    trips,
    horizon: float,
    warmup: float = 100.0,
    avg_queue: float = 0.0,
    seed: int = 0,
    scenario: str = "",
    teleports: int | None = None,
) -> EpisodeStats:
    """Average travel time, waiting and delay over vehicles departing after warm-up.

    Vehicles still driving at ``horizon`` count with their travel time so
    far.  Removed vehicles are left out of the averages but their teleports
    are counted.  ``avg_queue`` is the per-lane stopped count already
    averaged over post-warm-up seconds by the simulator.
    """
    trips = list(trips)
    if not trips:
        raise MetricError("episode_kpis: empty trip log")
    kept = [r for r in trips if r.depart >= warmup and r.status != "removed"]
    tele = sum(r.teleports for r in trips) if teleports is None else teleports
    rer = sum(r.reroutes for r in trips if r.depart >= warmup)
    if not kept:
        return EpisodeStats(scenario, seed, avg_queue, 0.0, 0.0, 0.0, rer, tele, 0, 0)
    tt = []
    for r in kept:
        end = r.arrival if r.arrival is not None else horizon
        tt.append(end - r.depart)
    n = len(kept)
    avg_tt = sum(tt) / n
    avg_wait = sum(r.waiting for r in kept) / n
    avg_delay = sum(max(0.0, t - r.freeflow) for t, r in zip(tt, kept)) / n
    arrived = sum(1 for r in kept if r.status == "arrived")
    return EpisodeStats(scenario, seed, avg_queue, avg_tt, avg_wait, avg_delay, rer, tele, n, arrived)


# ---------------------------------------------------------------- curves


def _check(curve: Sequence[float], min_len: int = 2) -> list[float]:
    vals = [float(x) for x in curve]
    if len(vals) < min_len:
        raise MetricError(f"curve needs at least {min_len} points, got {len(vals)}")
    if not all(math.isfinite(x) for x in vals):
        raise MetricError("curve contains non-finite values")
    return vals


def lsi(curve: Sequence[float]) -> float:
    """Mean squared episode-to-episode change."""
    c = _check(curve)
    return sum((c[t] - c[t - 1]) ** 2 for t in range(1, len(c))) / (len(c) - 1)


def fpd(curve: Sequence[float]) -> float:
    """Relative gap between the final and the best (minimum) value."""
    c = _check(curve, 1)
    best = min(c)
    if best == 0:
        raise MetricError("fpd: best value is zero")
    return abs(c[-1] - best) / abs(best)


def convergence_index(curve: Sequence[float], epsilon: float = 0.05) -> int:
    """First index after which the curve stays within ``epsilon * |final|`` of the final value.

    Never less than 1; equals the last index when the curve only settles at
    its final point.
    """
    c = _check(curve)
    if not epsilon > 0:
        raise MetricError("cr: epsilon must be > 0")
    final = c[-1]
    band = epsilon * abs(final)
    tc = len(c) - 1
    for t in range(len(c) - 1, -1, -1):
        if abs(c[t] - final) <= band:
            tc = t
        else:
            break
    return max(1, tc)


def cr(curve: Sequence[float], epsilon: float = 0.05) -> float:
    """Signed inverse of the convergence index: positive when the curve improved."""
    c = _check(curve)
    tc = convergence_index(c, epsilon)
    if c[-1] < c[0]:
        return 1.0 / tc
    if c[-1] > c[0]:
        return -1.0 / tc
    return 0.0


def auc(curve: Sequence[float]) -> float:
    """Trapezoidal area with unit spacing between episodes."""
    c = _check(curve)
    return sum((c[t] + c[t + 1]) / 2.0 for t in range(len(c) - 1))


def rauc(base: Sequence[float], perturbed: Sequence[float]) -> float:
    a = auc(base)
    if a == 0:
        raise MetricError("rauc: base AUC is zero")
    return (auc(perturbed) - a) / a


def pdi(train_perf: float, test_perf: float) -> float:
    if train_perf == 0:
        raise MetricError("pdi: train performance is zero")
    return (test_perf - train_perf) / train_perf


def curve_report(curve: Sequence[float], epsilon: float = 0.05, baseline: Sequence[float] | None = None) -> dict:
    out = {
        "points": len(curve),
        "lsi": lsi(curve),
        "fpd": fpd(curve),
        "cr": cr(curve, epsilon),
        "auc": auc(curve),
        "epsilon": epsilon,
    }
    if baseline is not None:
        out["rauc"] = rauc(baseline, curve)
    return out


def read_curve(path: str | Path) -> list[float]:
    """Indicator column of a curve CSV (``episode,indicator[,phase]``), ordered by row."""
    p = Path(path)
    if not p.is_file():
        raise MetricError(f"curve file not found: {p}")
    with p.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "indicator" not in reader.fieldnames:
            raise MetricError(f"{p}: missing 'indicator' column")
        try:
            return [float(row["indicator"]) for row in reader]
        except ValueError as exc:
            raise MetricError(f"{p}: {exc}") from exc
