"""Road network model: weighted digraph, JSON file format, exact oracle, generator."""

from __future__ import annotations

import heapq
import io
import json
import math
import random
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, NamedTuple, Sequence

from .errors import InfeasibleParams, ParseError, UnknownNode, Unreachable, ValidationError

MAX_ID_LEN = 64


class Edge(NamedTuple):
    source: str
    target: str
    cost: float

    @property
    def unit_id(self) -> str:
        return f"{self.source}>{self.target}"


@dataclass(frozen=True)
class PathResult:
    nodes: tuple[str, ...]
    total_cost: float

    def __len__(self):
        return len(self.nodes)

    @property
    def edges(self) -> list[tuple[str, str]]:
        return list(zip(self.nodes, self.nodes[1:]))


def _check_id(node_id) -> str:
    if not isinstance(node_id, str) or not node_id:
        raise ValidationError(f"node id must be a non-empty string, got {node_id!r}")
    if len(node_id) > MAX_ID_LEN or not node_id.isascii():
        raise ValidationError(f"node id {node_id!r} must be ASCII and at most {MAX_ID_LEN} chars")
    return node_id


class RoadGraph:
    """Immutable weighted digraph of intersections and road units.

    Successor lists are sorted by target id so every traversal that walks
    them is deterministic.
    """

    def __init__(self, nodes: Iterable[str], edges: Iterable[Edge], backbone: Sequence[str] = ()):
        node_list = [_check_id(n) for n in nodes]
        if len(set(node_list)) != len(node_list):
            raise ValidationError("duplicate node id")
        known = set(node_list)
        adjacency: dict[str, list[Edge]] = {n: [] for n in node_list}
        seen = set()
        edge_list = []
        for e in edges:
            if e.source not in known or e.target not in known:
                raise ValidationError(f"edge {e.unit_id} references an unknown node")
            if e.source == e.target:
                raise ValidationError(f"self-loop on {e.source!r}")
            cost = e.cost
            if isinstance(cost, bool) or not isinstance(cost, (int, float)):
                raise ValidationError(f"edge {e.unit_id} cost must be a number")
            if not math.isfinite(cost) or cost <= 0:
                raise ValidationError(f"edge {e.unit_id} cost must be positive and finite, got {cost}")
            if (e.source, e.target) in seen:
                raise ValidationError(f"duplicate edge {e.unit_id}")
            seen.add((e.source, e.target))
            e = Edge(e.source, e.target, float(cost))
            edge_list.append(e)
            adjacency[e.source].append(e)
        self.nodes: tuple[str, ...] = tuple(node_list)
        self.edges: tuple[Edge, ...] = tuple(edge_list)
        self._adj = {n: tuple(sorted(out, key=lambda e: e.target)) for n, out in adjacency.items()}
        self._index = {(e.source, e.target): e for e in edge_list}
        self.backbone: tuple[str, ...] = tuple(backbone)

    def __contains__(self, node) -> bool:
        return node in self._adj

    def __eq__(self, other) -> bool:
        if not isinstance(other, RoadGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    def __hash__(self):
        return hash((self.nodes, self.edges))

    def __repr__(self):
        return f"RoadGraph({len(self.nodes)} nodes, {len(self.edges)} edges)"

    def out_edges(self, node: str) -> tuple[Edge, ...]:
        return self._adj[node]

    def edge(self, source: str, target: str) -> Edge:
        return self._index[(source, target)]

    def has_edge(self, source: str, target: str) -> bool:
        return (source, target) in self._index

    def require(self, *nodes: str) -> None:
        for n in nodes:
            if n not in self._adj:
                raise UnknownNode(f"unknown node {n!r}")

    def total_cost(self) -> float:
        return sum(e.cost for e in self.edges)

    def with_costs(self, costs: Mapping[tuple[str, str], float]) -> "RoadGraph":
        """Copy of the graph with some edge costs replaced."""
        edges = [Edge(e.source, e.target, costs.get((e.source, e.target), e.cost)) for e in self.edges]
        return RoadGraph(self.nodes, edges, self.backbone)

    def with_edges(self, extra: Iterable[Edge]) -> "RoadGraph":
        return RoadGraph(self.nodes, list(self.edges) + list(extra), self.backbone)


def path_cost(g: RoadGraph, nodes: Sequence[str]) -> float:
    return sum(g.edge(a, b).cost for a, b in zip(nodes, nodes[1:]))


def make_path(g: RoadGraph, nodes: Sequence[str]) -> PathResult:
    return PathResult(tuple(nodes), path_cost(g, nodes))


def validate_path(g: RoadGraph, path: PathResult, origin: str | None = None, dest: str | None = None,
                  rel_tol: float = 1e-9) -> None:
    """Raise ValidationError unless ``path`` satisfies the PathResult contract on ``g``."""
    nodes = path.nodes
    if not nodes:
        raise ValidationError("empty path")
    if origin is not None and nodes[0] != origin:
        raise ValidationError(f"path starts at {nodes[0]!r}, expected {origin!r}")
    if dest is not None and nodes[-1] != dest:
        raise ValidationError(f"path ends at {nodes[-1]!r}, expected {dest!r}")
    if len(set(nodes)) != len(nodes):
        raise ValidationError("path repeats a node")
    for a, b in zip(nodes, nodes[1:]):
        if not g.has_edge(a, b):
            raise ValidationError(f"{a}>{b} is not an edge")
    expected = path_cost(g, nodes)
    if not math.isclose(path.total_cost, expected, rel_tol=rel_tol, abs_tol=1e-12):
        raise ValidationError(f"total cost {path.total_cost} != sum of edge costs {expected}")


# -- file format ---------------------------------------------------------------

def _read_document(source) -> dict:
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("nodes"), list) or not isinstance(doc.get("edges"), list):
        raise ParseError('graph document needs top-level "nodes" and "edges" arrays')
    return doc


def _parse_edges(doc: dict) -> list[Edge]:
    edges = []
    for i, raw in enumerate(doc["edges"]):
        if not isinstance(raw, dict) or not {"from", "to", "cost"} <= raw.keys():
            raise ParseError(f'edge #{i} needs "from", "to" and "cost"')
        cost = raw["cost"]
        if isinstance(cost, bool) or not isinstance(cost, (int, float)):
            raise ParseError(f"edge #{i} cost is not a number")
        edges.append(Edge(raw["from"], raw["to"], cost))
    return edges


def _parse_nodes(doc: dict) -> list[str]:
    nodes = []
    for i, raw in enumerate(doc["nodes"]):
        if not isinstance(raw, dict) or "id" not in raw:
            raise ParseError(f'node #{i} needs an "id"')
        nodes.append(raw["id"])
    return nodes


def load_graph(source: bytes | str | IO) -> RoadGraph:
    """Parse a graph document from bytes, text, or a readable stream."""
    doc = _read_document(source)
    return RoadGraph(_parse_nodes(doc), _parse_edges(doc))


def read_graph(path) -> RoadGraph:
    with open(path, "rb") as fh:
        return load_graph(fh)


def graph_to_dict(g: RoadGraph) -> dict:
    return {
        "nodes": [{"id": n} for n in g.nodes],
        "edges": [{"from": e.source, "to": e.target, "cost": e.cost} for e in g.edges],
    }


def dump_graph(g: RoadGraph) -> str:
    return json.dumps(graph_to_dict(g), indent=2) + "\n"


def write_graph(g: RoadGraph, path) -> None:
    with io.open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_graph(g))


# -- oracle --------------------------------------------------------------------

def dijkstra_shortest_path(g: RoadGraph, origin: str, dest: str) -> PathResult:
    """Minimum-cost path; among equal costs the lexicographically smallest node sequence."""
    g.require(origin, dest)
    best: dict[str, tuple[float, tuple[str, ...]]] = {origin: (0.0, (origin,))}
    heap = [(0.0, (origin,))]
    done = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == dest:
            return PathResult(path, cost)
        for e in g.out_edges(node):
            if e.target in done:
                continue
            cand = (cost + e.cost, path + (e.target,))
            if e.target not in best or cand < best[e.target]:
                best[e.target] = cand
                heapq.heappush(heap, cand)
    raise Unreachable(f"no path from {origin!r} to {dest!r}")


def shortest_distances(g: RoadGraph, dest: str) -> dict[str, float]:
    """Cost of the cheapest path from every node that can reach ``dest``."""
    g.require(dest)
    incoming: dict[str, list[Edge]] = {n: [] for n in g.nodes}
    for e in g.edges:
        incoming[e.target].append(e)
    dist = {dest: 0.0}
    heap = [(0.0, dest)]
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist[node]:
            continue
        for e in incoming[node]:
            nd = d + e.cost
            if nd < dist.get(e.source, math.inf):
                dist[e.source] = nd
                heapq.heappush(heap, (nd, e.source))
    return dist


def reachable(g: RoadGraph, origin: str) -> set[str]:
    seen = {origin}
    stack = [origin]
    while stack:
        for e in g.out_edges(stack.pop()):
            if e.target not in seen:
                seen.add(e.target)
                stack.append(e.target)
    return seen


# -- generators ----------------------------------------------------------------

def random_graph(n: int, m: int, cost_range: tuple[int, int], seed: int) -> RoadGraph:
    """Seeded digraph with a directed Hamiltonian backbone plus ``m - (n-1)`` random edges.

    ``g.backbone[0]`` reaches every node.
    """
    lo, hi = cost_range
    if n < 2 or m < n - 1 or lo < 1 or hi < lo:
        raise InfeasibleParams(f"need n >= 2, m >= n-1, 1 <= lo <= hi (got n={n}, m={m}, range={cost_range})")
    if m > n * (n - 1):
        raise InfeasibleParams(f"m={m} exceeds n*(n-1)={n * (n - 1)}")
    rng = random.Random(seed)
    width = len(str(n - 1))
    ids = [f"v{i:0{width}d}" for i in range(n)]
    order = ids[:]
    rng.shuffle(order)
    pairs = {}
    for a, b in zip(order, order[1:]):
        pairs[(a, b)] = rng.randint(lo, hi)
    missing = [(a, b) for a in ids for b in ids if a != b and (a, b) not in pairs]
    for pair in rng.sample(missing, m - (n - 1)):
        pairs[pair] = rng.randint(lo, hi)
    edges = [Edge(a, b, c) for (a, b), c in sorted(pairs.items())]
    return RoadGraph(ids, edges, backbone=order)


def graph_from_edges(edges: Iterable[tuple[str, str, float]], nodes: Iterable[str] = ()) -> RoadGraph:
    """Convenience constructor; nodes are taken from ``nodes`` then edge endpoints."""
    edges = [Edge(a, b, c) for a, b, c in edges]
    order = list(dict.fromkeys(list(nodes) + [x for e in edges for x in (e.source, e.target)]))
    return RoadGraph(order, edges)
