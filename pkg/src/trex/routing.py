"""Shortest paths and cost-to-go fields over the edge graph.

Routes are sequences of edges.  The cost of a route is the sum of the costs
of every edge except the last one: a vehicle is considered to have arrived
once it enters its destination edge.  Cost-to-go follows the same
convention, so ``w[dest] == 0`` and ``w[e] = cost[e] + min(w[successor])``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .netmodel import NetworkModel

ALGORITHMS = ("dijkstra", "astar", "greedy")


class NoPathError(RuntimeError):
    pass


@dataclass(frozen=True)
class EdgeCostField:
    costs: Mapping[str, float]
    timestamp: float = 0.0

    def __getitem__(self, edge: str) -> float:
        return self.costs[edge]


@dataclass(frozen=True)
class CostToGo:
    destination: str
    values: Mapping[str, float]

    def __getitem__(self, edge: str) -> float:
        return self.values[edge]


def free_flow_costs(net: NetworkModel) -> dict[str, float]:
    return {e.id: e.free_flow_time for e in net.edges.values()}


def noisy_costs(measured: Mapping[str, float], error: float, rng: np.random.Generator | None) -> dict[str, float]:
    """Multiply every edge cost by ``1 + error * u`` with ``u ~ U(-1, 1)``.

    One factor per edge, drawn in sorted edge order so the stream
    consumption does not depend on dict ordering.
    """
    if error == 0 or rng is None:
        return dict(measured)
    keys = sorted(measured)
    u = rng.uniform(-1.0, 1.0, size=len(keys))
    return {k: measured[k] * (1.0 + error * float(x)) for k, x in zip(keys, u)}


def edge_costs(state, error: float = 0.0, rng: np.random.Generator | None = None) -> EdgeCostField:
    """Driver-perceived travel times on every edge of a running simulation.

    The measured value per edge is the exponentially weighted mean of
    recently completed traversals; without any, the instantaneous
    length / mean speed of vehicles on the edge; without vehicles, the
    free-flow time.  Each driver then perceives that value with a
    multiplicative error of up to ``error``.
    """
    return EdgeCostField(noisy_costs(state.measured_costs(), error, rng), state.t)


def path_cost(path: Sequence[str], costs: Mapping[str, float]) -> float:
    return sum(costs[e] for e in path[:-1])


def _astar_rate(net: NetworkModel, costs: Mapping[str, float]) -> float:
    """Smallest cost per metre over all edges, so rate * straight-line is admissible."""
    rates = [costs[e] / net.edges[e].length for e in costs if math.isfinite(costs[e])]
    return max(0.0, min(rates)) if rates else 0.0


def _heuristic(net: NetworkModel, rate: float, edge: str, dest: str) -> float:
    if rate == 0.0:
        return 0.0
    return rate * net.euclid(net.edges[edge].from_node, net.edges[dest].from_node)


def _reconstruct(parent: dict[str, str | None], dest: str) -> list[str]:
    path = [dest]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def _best_first(net, costs, origin, dest, use_heuristic: bool) -> list[str]:
    rate = _astar_rate(net, costs) if use_heuristic else 0.0
    g = {origin: 0.0}
    parent: dict[str, str | None] = {origin: None}
    heap = [(_heuristic(net, rate, origin, dest), 0.0, origin)]
    closed = set()
    while heap:
        _, g_e, e = heapq.heappop(heap)
        if e in closed:
            continue
        if e == dest:
            return _reconstruct(parent, dest)
        closed.add(e)
        c = costs[e]
        if not math.isfinite(c):
            continue
        for f in net.successors[e]:
            if f in closed:
                continue
            g_f = g_e + c
            if g_f < g.get(f, math.inf):
                g[f] = g_f
                parent[f] = e
                heapq.heappush(heap, (g_f + _heuristic(net, rate, f, dest), g_f, f))
    raise NoPathError(f"no path from {origin!r} to {dest!r}")


def _greedy(net, costs, origin, dest) -> list[str]:
    rate = _astar_rate(net, costs)
    path = [origin]
    visited = {origin}
    options: list[list[str]] = []

    def ranked(e: str) -> list[str]:
        if not math.isfinite(costs[e]):
            return []
        cands = [f for f in net.successors[e] if f not in visited]
        # lowest key first; list is consumed from the end
        cands.sort(key=lambda f: (costs[f] + _heuristic(net, rate, f, dest), f), reverse=True)
        return cands

    options.append(ranked(origin))
    while path[-1] != dest:
        frontier = options[-1]
        while frontier and frontier[-1] in visited:
            frontier.pop()
        if not frontier:
            options.pop()
            path.pop()
            if not path:
                raise NoPathError(f"no path from {origin!r} to {dest!r}")
            continue
        nxt = frontier.pop()
        visited.add(nxt)
        path.append(nxt)
        options.append(ranked(nxt))
    return path


def shortest_path(
    net: NetworkModel,
    costs: Mapping[str, float] | EdgeCostField,
    origin: str,
    destination: str,
    algo: str = "dijkstra",
) -> list[str]:
    """Route from ``origin`` to ``destination`` as an ordered list of edges.

    Edges with infinite cost can be entered (the destination may be one)
    but never traversed.  ``greedy`` follows the successor with the lowest
    edge cost plus straight-line time to go, backtracking out of dead ends;
    it is complete but not optimal.
    """
    if isinstance(costs, EdgeCostField):
        costs = costs.costs
    for e in (origin, destination):
        if e not in net.edges:
            raise KeyError(f"unknown edge {e!r}")
    if origin == destination:
        return [origin]
    if algo == "dijkstra":
        return _best_first(net, costs, origin, destination, use_heuristic=False)
    if algo == "astar":
        return _best_first(net, costs, origin, destination, use_heuristic=True)
    if algo == "greedy":
        return _greedy(net, costs, origin, destination)
    raise ValueError(f"unknown routing algorithm {algo!r}")


def cost_to_go(net: NetworkModel, costs: Mapping[str, float] | EdgeCostField, destination: str) -> CostToGo:
    """Backward Dijkstra from ``destination`` over the reversed edge graph."""
    if isinstance(costs, EdgeCostField):
        costs = costs.costs
    if destination not in net.edges:
        raise KeyError(f"unknown edge {destination!r}")
    w = {e: math.inf for e in net.edges}
    w[destination] = 0.0
    heap = [(0.0, destination)]
    done = set()
    while heap:
        w_f, f = heapq.heappop(heap)
        if f in done:
            continue
        done.add(f)
        for e in net.predecessors[f]:
            c = costs[e]
            if not math.isfinite(c) or e in done:
                continue
            cand = c + w_f
            if cand < w[e]:
                w[e] = cand
                heapq.heappush(heap, (cand, e))
    return CostToGo(destination, w)
