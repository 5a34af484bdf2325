"""Baseline solvers: Ant System style ACO and parallel uniform random walks."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InfeasibleParams, NotConverged, NotFound
from .graph import PathResult, RoadGraph, dijkstra_shortest_path, path_cost

SEED_MASK = (1 << 64) - 1


def _rows(seed: int, key: int, count: int, length: int) -> list[list[float]]:
    seq = np.random.SeedSequence([seed & SEED_MASK, key])
    return np.random.default_rng(seq).random((count, length)).tolist()


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- ant colony ----------------------------------------------------------------

@dataclass(frozen=True)
class AcoParams:
    ants: int = 32
    alpha: float = 1.0
    beta: float = 2.0
    evaporation: float = 0.5
    deposit_q: float = 1.0
    initial_pheromone: float = 1.0
    max_steps: Optional[int] = None  # None: 4 * |V|
    max_iterations: int = 1000
    stable_iterations: int = 15
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        checks = [
            (self.ants >= 1, "ants must be >= 1"),
            (self.alpha >= 0 and self.beta >= 0, "alpha and beta must be non-negative"),
            (0 < self.evaporation < 1, "evaporation must lie in (0, 1)"),
            (self.deposit_q > 0, "deposit_q must be positive"),
            (self.initial_pheromone > 0, "initial_pheromone must be positive"),
            (self.max_steps is None or self.max_steps >= 1, "max_steps must be >= 1"),
            (self.max_iterations >= 1 and self.stable_iterations >= 1, "iteration limits must be >= 1"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InfeasibleParams(msg)

    def resolve(self, g: RoadGraph) -> "AcoParams":
        return self if self.max_steps is not None else replace(self, max_steps=4 * len(g.nodes))


@dataclass
class PheromoneField:
    tau: dict[tuple[str, str], float]

    def __getitem__(self, key):
        return self.tau[key]


@dataclass
class AcoStats:
    algo: str = "aco"
    iterations: int = 0
    launched: int = 0
    completed: int = 0
    converged: bool = False
    cycle_walks: int = 0

    def row(self) -> dict:
        return {
            "iterations": self.iterations,
            "launched": self.launched,
            "completed": self.completed,
            "deposits": 0,
            "converged": int(self.converged),
        }


def init_pheromone(g: RoadGraph, p: AcoParams) -> PheromoneField:
    return PheromoneField({(e.source, e.target): p.initial_pheromone for e in g.edges})


def update_pheromone(field_: PheromoneField, walks: list[tuple[list[str], float]], p: AcoParams) -> PheromoneField:
    """Evaporate every edge, then let each completed walk deposit ``Q / cost`` per traversal."""
    keep = 1.0 - p.evaporation
    tau = {k: v * keep for k, v in field_.tau.items()}
    for nodes, cost in walks:
        share = p.deposit_q / cost
        for edge in zip(nodes, nodes[1:]):
            tau[edge] += share
    return PheromoneField(tau)


def ant_walk(g: RoadGraph, tau: PheromoneField, origin: str, dest: str, p: AcoParams, rng,
             tabu: bool = True) -> tuple[list[str], bool]:
    """One ant; returns its node sequence and whether it reached ``dest``."""
    nodes = [origin]
    visited = {origin}
    at = origin
    for _ in range(p.max_steps):
        if at == dest:
            return nodes, True
        options = []
        total = 0.0
        for e in g.out_edges(at):
            if tabu and e.target in visited:
                continue
            w = tau.tau[(e.source, e.target)] ** p.alpha * (1.0 / e.cost) ** p.beta
            options.append((e.target, w))
            total += w
        if not options or total <= 0:
            return nodes, False
        r = rng.random() * total
        acc = 0.0
        nxt = options[-1][0]
        for target, w in options:
            acc += w
            if r < acc:
                nxt = target
                break
        nodes.append(nxt)
        visited.add(nxt)
        at = nxt
    return nodes, at == dest


class _RowStream:
    __slots__ = ("random",)

    def __init__(self, values):
        self.random = iter(values).__next__


def _colony(g, tau, origin, dest, p, iteration, tabu):
    rows = _rows(p.seed, iteration, p.ants, p.max_steps + 1)
    return _map(lambda row: ant_walk(g, tau, origin, dest, p, _RowStream(row), tabu), rows, p.workers)


def aco_solve(g: RoadGraph, origin: str, dest: str, p: AcoParams = AcoParams()) -> tuple[PathResult, AcoStats]:
    """Classical Ant System with tabu lists.

    Converges once the iteration-best path repeats for ``stable_iterations``
    rounds; returns the cheapest path seen.
    """
    g.require(origin, dest)
    stats = AcoStats()
    if origin == dest:
        stats.converged = True
        return PathResult((origin,), 0.0), stats
    dijkstra_shortest_path(g, origin, dest)
    p = p.resolve(g)
    tau = init_pheromone(g, p)
    best: Optional[tuple[float, tuple[str, ...]]] = None
    last_round = None
    stable = 0
    for k in range(p.max_iterations):
        walks = _colony(g, tau, origin, dest, p, k, tabu=True)
        stats.iterations += 1
        stats.launched += p.ants
        done = [(nodes, path_cost(g, nodes)) for nodes, ok in walks if ok]
        stats.completed += len(done)
        tau = update_pheromone(tau, done, p)
        if not done:
            stable = 0
            continue
        round_best = min((cost, tuple(nodes)) for nodes, cost in done)
        if best is None or round_best < best:
            best = round_best
        if round_best[1] == last_round:
            stable += 1
        else:
            stable = 1
        last_round = round_best[1]
        if stable >= p.stable_iterations:
            stats.converged = True
            break
    if best is None:
        raise NotConverged(f"no ant reached {dest!r} in {stats.iterations} iterations", stats)
    return PathResult(best[1], best[0]), stats


def has_repeat(nodes) -> bool:
    return len(set(nodes)) != len(nodes)


def aco_cycle_pressure(g: RoadGraph, origin: str, dest: str, p: AcoParams = AcoParams(),
                       walks: int = 1000) -> float:
    """Fraction of ant walks that revisit a node when the tabu list is switched off.

    Pheromone is still updated between rounds, so looping walks that do reach
    ``dest`` reinforce their own loops.
    """
    g.require(origin, dest)
    if origin == dest:
        return 0.0
    p = p.resolve(g)
    tau = init_pheromone(g, p)
    looped = 0
    seen = 0
    k = 0
    while seen < walks:
        batch = _colony(g, tau, origin, dest, p, k, tabu=False)
        k += 1
        done = []
        for nodes, ok in batch:
            if seen >= walks:
                break
            seen += 1
            looped += has_repeat(nodes)
            if ok:
                done.append((nodes, path_cost(g, nodes)))
        tau = update_pheromone(tau, done, p)
    return looped / walks


# -- random walks --------------------------------------------------------------

@dataclass(frozen=True)
class WalkParams:
    walkers: int = 8
    max_steps: int = 100
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.walkers < 1 or self.max_steps < 1 or self.workers < 1:
            raise InfeasibleParams("walkers, max_steps and workers must be >= 1")


@dataclass
class WalkStats:
    algo: str = "walk"
    walkers: int = 0
    steps: int = 0
    reached: int = 0
    coverage: int = 0
    visited: set = field(default_factory=set)

    def row(self) -> dict:
        return {
            "iterations": 1,
            "launched": self.walkers,
            "completed": self.reached,
            "deposits": 0,
            "converged": int(self.reached > 0),
        }


def uniform_step(g: RoadGraph, node: str, u: float) -> Optional[str]:
    """Successor chosen uniformly at random from ``u`` in [0, 1); None at a dead end."""
    out = g.out_edges(node)
    if not out:
        return None
    return out[min(int(u * len(out)), len(out) - 1)].target


def random_walk(g: RoadGraph, origin: str, max_steps: int, rng, dest: Optional[str] = None) -> list[str]:
    nodes = [origin]
    at = origin
    for _ in range(max_steps):
        if at == dest:
            break
        nxt = uniform_step(g, at, rng.random())
        if nxt is None:
            break
        nodes.append(nxt)
        at = nxt
    return nodes


def loop_erase(nodes) -> list[str]:
    """Chronological loop erasure: cut every cycle as soon as it closes."""
    out: list[str] = []
    where: dict[str, int] = {}
    for n in nodes:
        if n in where:
            cut = where[n]
            for dropped in out[cut + 1:]:
                del where[dropped]
            out = out[:cut + 1]
        else:
            where[n] = len(out)
            out.append(n)
    return out


def _walks(g, origin, p, dest):
    rows = _rows(p.seed, 0, p.walkers, p.max_steps)
    return _map(lambda row: random_walk(g, origin, p.max_steps, _RowStream(row), dest), rows, p.workers)


def walk_coverage(g: RoadGraph, origin: str, p: WalkParams) -> int:
    """Distinct nodes touched by ``p.walkers`` independent walks that ignore any destination."""
    g.require(origin)
    seen = set()
    for nodes in _walks(g, origin, p, None):
        seen.update(nodes)
    return len(seen)


def random_walk_solve(g: RoadGraph, origin: str, dest: str, p: WalkParams = WalkParams()) -> tuple[PathResult, WalkStats]:
    """Cheapest loop-erased walk among ``p.walkers`` uniform walks that reached ``dest``."""
    g.require(origin, dest)
    stats = WalkStats(walkers=p.walkers)
    best = None
    for nodes in _walks(g, origin, p, dest):
        stats.steps += len(nodes) - 1
        stats.visited.update(nodes)
        if nodes[-1] != dest:
            continue
        stats.reached += 1
        erased = loop_erase(nodes)
        cand = (path_cost(g, erased), tuple(erased))
        if best is None or cand < best:
            best = cand
    stats.coverage = len(stats.visited)
    if best is None:
        raise NotFound(f"none of {p.walkers} walks reached {dest!r}", stats)
    return PathResult(best[1], best[0]), stats
