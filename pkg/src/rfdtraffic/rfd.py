"""River Formation Dynamics path solver.

Drops start at the origin and descend a per-node altitude landscape whose
destination is a hole pinned at altitude 0. Moving down a steep edge erodes
the departed node; a drop stuck in a pit fills it up to its lowest neighbour
and dies. After enough drops the landscape holds a strictly decreasing
route from the origin to the hole, which ``extract_steepest_path`` reads off.

Erosion only removes the part of a slope that exceeds a critical slope, and
never cuts a node below the level that slope allows. With
``critical_slope=0`` the rules reduce to plain gradient-proportional erosion.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import InfeasibleParams, NoDescent, NotBlocked, NotConverged
from .graph import Edge, PathResult, RoadGraph, dijkstra_shortest_path

SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RfdParams:
    initial_altitude: float = 100.0
    erosion_rate: float = 0.5
    flat_weight: float = 0.1
    deposit_rate: float = 1.0
    drops_per_iteration: int = 32
    max_steps: Optional[int] = None  # None: 4 * |V|
    max_iterations: int = 1000
    stable_iterations: int = 15
    min_altitude: float = 1e-6
    flat_tolerance: float = 1e-9
    # Slope below which water no longer erodes. None: A0 / total edge cost,
    # which keeps slope * distance under A0 for every simple path.
    critical_slope: Optional[float] = None
    # Exploration weight for climbing moves, as a fraction of the critical slope.
    climb_ratio: float = 0.3
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        checks = [
            (self.initial_altitude > 0, "initial_altitude must be positive"),
            (self.erosion_rate > 0, "erosion_rate must be positive"),
            (self.flat_weight > 0, "flat_weight must be positive"),
            (0 < self.deposit_rate <= 1, "deposit_rate must lie in (0, 1]"),
            (self.drops_per_iteration >= 1, "drops_per_iteration must be >= 1"),
            (self.max_steps is None or self.max_steps >= 1, "max_steps must be >= 1"),
            (self.max_iterations >= 1, "max_iterations must be >= 1"),
            (self.stable_iterations >= 1, "stable_iterations must be >= 1"),
            (self.min_altitude > 0, "min_altitude must be positive"),
            (self.flat_tolerance >= 0, "flat_tolerance must be non-negative"),
            (self.flat_weight < self.initial_altitude, "flat_weight must be below initial_altitude"),
            (self.critical_slope is None or self.critical_slope >= 0, "critical_slope must be non-negative"),
            (0 <= self.climb_ratio < 1, "climb_ratio must lie in [0, 1)"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InfeasibleParams(msg)

    def resolve(self, g: RoadGraph) -> "RfdParams":
        """Fill graph-dependent defaults."""
        steps = self.max_steps if self.max_steps is not None else 4 * len(g.nodes)
        slope = self.critical_slope
        if slope is None:
            total = g.total_cost()
            slope = self.initial_altitude / total if total > 0 else 0.0
        return replace(self, max_steps=steps, critical_slope=slope)


@dataclass
class Landscape:
    altitude: dict[str, float]
    destination: str

    def copy(self) -> "Landscape":
        return Landscape(dict(self.altitude), self.destination)

    def __getitem__(self, node: str) -> float:
        return self.altitude[node]


@dataclass
class Drop:
    at: str
    path: list[str]
    alive: bool = True
    status: str = "walking"  # walking | completed | blocked | expired | stranded


@dataclass(frozen=True)
class ErosionDelta:
    node: str
    delta: float
    # Erosion may not push ``node`` below this level in the current iteration.
    floor: Optional[float] = None


@dataclass
class IterationOutcome:
    completed: int = 0
    blocked: int = 0
    expired: int = 0
    stranded: int = 0
    deposited: set = field(default_factory=set)


@dataclass
class SolveStats:
    algo: str = "rfd"
    iterations: int = 0
    launched: int = 0
    completed: int = 0
    deposits: int = 0
    converged: bool = False
    landscape: Optional[Landscape] = None
    # node -> (lowest neighbour altitude, own altitude) right after its last deposit
    last_deposit: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "iterations": self.iterations,
            "launched": self.launched,
            "completed": self.completed,
            "deposits": self.deposits,
            "converged": int(self.converged),
        }


class _RowStream:
    """Feeds a pre-drawn row of uniforms to one drop."""

    __slots__ = ("random",)

    def __init__(self, values):
        self.random = iter(values).__next__


def init_landscape(g: RoadGraph, dest: str, p: RfdParams) -> Landscape:
    g.require(dest)
    alt = {v: p.initial_altitude for v in g.nodes}
    alt[dest] = 0.0
    return Landscape(alt, dest)


def _critical_slope(g: RoadGraph, p: RfdParams) -> float:
    if p.critical_slope is not None:
        return p.critical_slope
    return p.resolve(g).critical_slope


def _slope(L: Landscape, e: Edge) -> float:
    return (L.altitude[e.source] - L.altitude[e.target]) / e.cost


def transition_weights(g: RoadGraph, L: Landscape, d: Drop, p: RfdParams) -> dict[Edge, float]:
    """Unnormalised move weights out of ``d.at``.

    Downhill edges weigh their slope, flat edges ``flat_weight / cost``.
    Climbing is only offered from a node that has a downhill or flat exit,
    so a pit yields all-zero weights.
    """
    tol = p.flat_tolerance
    climb = p.climb_ratio * _critical_slope(g, p)
    alt = L.altitude
    here = alt[d.at]
    weights = {}
    exit_found = False
    for e in g.out_edges(d.at):
        gamma = (here - alt[e.target]) / e.cost
        if gamma > tol:
            w = gamma
            exit_found = True
        elif gamma >= -tol:
            w = p.flat_weight / e.cost + climb
            exit_found = True
        else:
            w = climb
        weights[e] = w
    if not exit_found:
        return dict.fromkeys(weights, 0.0)
    if len(d.path) >= 2:
        prev = d.path[-2]
        for e, w in weights.items():
            if e.target == prev:
                if w > 0 and any(v > 0 for k, v in weights.items() if k is not e):
                    weights[e] = 0.0
                break
    return weights


def is_pit(g: RoadGraph, L: Landscape, node: str, tol: float = 0.0) -> bool:
    out = g.out_edges(node)
    return node != L.destination and bool(out) and all(_slope(L, e) < -tol for e in out)


def deposit_sediment(g: RoadGraph, L: Landscape, node: str, p: RfdParams) -> ErosionDelta:
    """Fill a pit towards its lowest neighbour (exactly up to it when deposit_rate is 1)."""
    if not is_pit(g, L, node, p.flat_tolerance):
        raise NotBlocked(f"{node!r} has a downhill or flat exit")
    lowest = min(L.altitude[e.target] for e in g.out_edges(node))
    return ErosionDelta(node, p.deposit_rate * (lowest - L.altitude[node]))


def advance_drop(g: RoadGraph, L: Landscape, d: Drop, rng, p: RfdParams) -> tuple[Drop, list[ErosionDelta]]:
    """Move ``d`` one edge; returns the updated drop and the deltas it emits."""
    if not d.alive:
        return d, []
    cap = p.max_steps if p.max_steps is not None else 4 * len(g.nodes)
    if len(d.path) > cap:
        return Drop(d.at, d.path, False, "expired"), []
    weights = transition_weights(g, L, d, p)
    total = sum(weights.values())
    if total <= 0:
        if is_pit(g, L, d.at, p.flat_tolerance):
            return Drop(d.at, d.path, False, "blocked"), [deposit_sediment(g, L, d.at, p)]
        return Drop(d.at, d.path, False, "stranded"), []

    target = rng.random() * total
    acc = 0.0
    chosen = None
    for e, w in weights.items():
        if w <= 0:
            continue
        chosen = e
        acc += w
        if target < acc:
            break

    gamma = _slope(L, chosen)
    w = weights[chosen]
    slope = _critical_slope(g, p)
    deltas = []
    if gamma > p.flat_tolerance:
        if w > slope:
            floor = L.altitude[chosen.target] + slope * chosen.cost
            deltas.append(ErosionDelta(d.at, -p.erosion_rate * (w - slope), floor))
    elif gamma >= -p.flat_tolerance and w > slope:
        deltas.append(ErosionDelta(d.at, -p.erosion_rate * (w - slope)))

    path = d.path + [chosen.target]
    if chosen.target == L.destination:
        return Drop(chosen.target, path, False, "completed"), deltas
    return Drop(chosen.target, path, True, "walking"), deltas


def _run_drop(g, L, origin, p, row):
    rng = _RowStream(row)
    d = Drop(origin, [origin])
    emitted = []
    while d.alive:
        d, deltas = advance_drop(g, L, d, rng, p)
        emitted.extend(deltas)
    return d, emitted


def _uniforms(p: RfdParams, iteration: int) -> list[list[float]]:
    seq = np.random.SeedSequence([p.seed & SEED_MASK, iteration])
    block = np.random.default_rng(seq).random((p.drops_per_iteration, p.max_steps + 1))
    return block.tolist()


def apply_deltas(L: Landscape, deltas, p: RfdParams) -> Landscape:
    """Barrier reduction: sum deltas in the given order, respect erosion floors, clamp."""
    erosion: dict[str, float] = {}
    deposit: dict[str, float] = {}
    floors: dict[str, float] = {}
    for dl in deltas:
        if dl.delta < 0:
            erosion[dl.node] = erosion.get(dl.node, 0.0) + dl.delta
            if dl.floor is not None:
                floors[dl.node] = min(floors.get(dl.node, math.inf), dl.floor)
        else:
            deposit[dl.node] = deposit.get(dl.node, 0.0) + dl.delta
    out = L.copy()
    alt = out.altitude
    for node in erosion.keys() | deposit.keys():
        if node == L.destination:
            continue
        a = alt[node]
        new = a + erosion.get(node, 0.0)
        if node in floors:
            new = max(new, min(floors[node], a))
        new += deposit.get(node, 0.0)
        alt[node] = min(p.initial_altitude, max(p.min_altitude, new))
    alt[L.destination] = 0.0
    return out


def iterate(g: RoadGraph, L: Landscape, origin: str, p: RfdParams, iteration: int) -> tuple[Landscape, IterationOutcome]:
    """One batch of drops against a frozen snapshot, then a single-writer barrier."""
    rows = _uniforms(p, iteration)
    if p.workers > 1:
        with ThreadPoolExecutor(max_workers=p.workers) as pool:
            results = list(pool.map(lambda row: _run_drop(g, L, origin, p, row), rows))
    else:
        results = [_run_drop(g, L, origin, p, row) for row in rows]

    outcome = IterationOutcome()
    ordered = []
    for drop, emitted in results:
        setattr(outcome, drop.status, getattr(outcome, drop.status) + 1)
        ordered.extend(emitted)
        if drop.status == "blocked":
            outcome.deposited.add(drop.at)
    return apply_deltas(L, ordered, p), outcome


def run_iteration(g: RoadGraph, L: Landscape, origin: str, p: RfdParams, iteration_index: int) -> Landscape:
    g.require(origin)
    p = p.resolve(g) if p.max_steps is None or p.critical_slope is None else p
    return iterate(g, L, origin, p, iteration_index)[0]


def extract_steepest_path(g: RoadGraph, L: Landscape, origin: str, tol: float = 0.0) -> PathResult:
    """Greedy steepest descent; ties go to the lexicographically smallest target."""
    g.require(origin)
    nodes = [origin]
    cost = 0.0
    cur = origin
    while cur != L.destination:
        best = None
        best_slope = tol
        for e in g.out_edges(cur):
            s = _slope(L, e)
            if s > best_slope:
                best, best_slope = e, s
        if best is None:
            raise NoDescent(f"no downhill edge out of {cur!r}", partial=nodes)
        nodes.append(best.target)
        cost += best.cost
        cur = best.target
    return PathResult(tuple(nodes), cost)


def mean_gradient(L: Landscape, path: PathResult) -> float:
    """Cost-weighted mean slope along ``path``: sum of altitude drops over total cost."""
    drops = sum(L.altitude[a] - L.altitude[b] for a, b in path.edges)
    return drops / path.total_cost


Observer = Callable[[int, Landscape, IterationOutcome], None]


def solve(g: RoadGraph, origin: str, dest: str, p: RfdParams = RfdParams(),
          observer: Optional[Observer] = None, landscape: Optional[Landscape] = None,
          start_iteration: int = 0) -> tuple[PathResult, SolveStats]:
    """Iterate until the extracted path is identical for ``stable_iterations`` rounds.

    ``landscape`` and ``start_iteration`` allow resuming a previous run (for
    instance after the graph gained an edge). Hitting ``max_iterations`` returns
    the last successful extraction with ``converged=False``; having none raises
    NotConverged.
    """
    g.require(origin, dest)
    stats = SolveStats()
    if origin == dest:
        stats.converged = True
        stats.landscape = landscape or init_landscape(g, dest, p)
        return PathResult((origin,), 0.0), stats
    dijkstra_shortest_path(g, origin, dest)  # raises Unreachable

    p = p.resolve(g)
    L = landscape.copy() if landscape is not None else init_landscape(g, dest, p)
    last: Optional[PathResult] = None
    stable = 0
    for k in range(start_iteration, start_iteration + p.max_iterations):
        L, outcome = iterate(g, L, origin, p, k)
        stats.iterations += 1
        stats.launched += p.drops_per_iteration
        stats.completed += outcome.completed
        stats.deposits += outcome.blocked
        for node in sorted(outcome.deposited):
            lowest = min(L.altitude[e.target] for e in g.out_edges(node))
            stats.last_deposit[node] = (lowest, L.altitude[node])
        if observer is not None:
            observer(k, L, outcome)
        try:
            path = extract_steepest_path(g, L, origin, p.flat_tolerance)
        except NoDescent:
            stable = 0
            continue
        if last is not None and path.nodes == last.nodes:
            stable += 1
        else:
            stable = 1
        last = path
        if stable >= p.stable_iterations:
            stats.converged = True
            break
    stats.landscape = L
    if last is None:
        raise NotConverged(f"no descending path after {stats.iterations} iterations", stats)
    return last, stats


def dump_landscape(L: Landscape) -> str:
    return "".join(f"{node},{alt!r}\n" for node, alt in sorted(L.altitude.items()))
