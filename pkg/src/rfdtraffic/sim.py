"""Fixed-step road network simulator with congestion-aware rerouting and adaptive signals.

Vehicles traverse road units (directed edges) in a travel time fixed at entry
by the unit's congestion index. At the downstream intersection they queue and
are discharged at a saturation flow scaled by the approach's green share.
Every ``reroute_every_s`` the router recomputes routes on the current travel
times and signal splits are rebalanced to queue lengths.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import zlib
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .baselines import AcoParams, aco_solve
from .errors import InfeasibleCycle, ParseError, RfdTrafficError, ValidationError
from .graph import Edge, PathResult, RoadGraph, _read_document, dijkstra_shortest_path
from .rfd import RfdParams, solve as rfd_solve

log = logging.getLogger(__name__)

ROUTERS = ("rfd", "aco", "dijkstra", "static")
SEED_MASK = (1 << 64) - 1


# -- network -------------------------------------------------------------------

@dataclass
class RoadUnit:
    edge: Edge
    length_m: float
    lanes: int
    free_flow_time_s: float
    vehicle_count: int = 0

    @property
    def unit_id(self) -> str:
        return self.edge.unit_id

    def jam_capacity(self, jam_density: float) -> int:
        return math.ceil(jam_density * self.length_m * self.lanes)


@dataclass(frozen=True)
class IntersectionSpec:
    cycle_s: float = 60.0
    lost_time_s: float = 4.0
    min_green_s: float = 7.0


@dataclass
class Network:
    graph: RoadGraph
    units: dict[str, RoadUnit]
    intersections: dict[str, IntersectionSpec]

    def incoming(self, node: str) -> list[str]:
        return sorted(u for u, unit in self.units.items() if unit.edge.target == node)


def _positive(raw: dict, key: str, i: int, integer: bool = False):
    value = raw.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"edge #{i}: {key!r} must be a number")
    if integer and (not float(value).is_integer()):
        raise ValidationError(f"edge #{i}: {key!r} must be an integer")
    if not math.isfinite(value) or value <= 0:
        raise ValidationError(f"edge #{i}: {key!r} must be positive")
    return int(value) if integer else float(value)


def load_network(source) -> Network:
    """Parse a network document: the graph format plus unit geometry and signal settings."""
    doc = _read_document(source)
    edges = []
    geometry = []
    for i, raw in enumerate(doc["edges"]):
        if not isinstance(raw, dict) or not {"from", "to"} <= raw.keys():
            raise ParseError(f'edge #{i} needs "from" and "to"')
        length = _positive(raw, "lengthM", i)
        lanes = _positive(raw, "lanes", i, integer=True)
        fft = _positive(raw, "freeFlowTimeS", i)
        cost = raw.get("cost", fft)
        edges.append(Edge(raw["from"], raw["to"], cost))
        geometry.append((length, lanes, fft))
    nodes = []
    specs = {}
    for i, raw in enumerate(doc["nodes"]):
        if not isinstance(raw, dict) or "id" not in raw:
            raise ParseError(f'node #{i} needs an "id"')
        nodes.append(raw["id"])
        keys = {"cycleS": "cycle_s", "lostTimeS": "lost_time_s", "minGreenS": "min_green_s"}
        given = {attr: float(raw[k]) for k, attr in keys.items() if k in raw}
        specs[raw["id"]] = IntersectionSpec(**given)
    g = RoadGraph(nodes, edges)
    units = {}
    for e, (length, lanes, fft) in zip(g.edges, geometry):
        units[e.unit_id] = RoadUnit(e, length, lanes, fft)
    return Network(g, units, specs)


def read_network(path) -> Network:
    with open(path, "rb") as fh:
        return load_network(fh)


def dump_network(net: Network) -> str:
    nodes = []
    for n in net.graph.nodes:
        spec = net.intersections.get(n, IntersectionSpec())
        nodes.append({"id": n, "cycleS": spec.cycle_s, "lostTimeS": spec.lost_time_s, "minGreenS": spec.min_green_s})
    edges = [
        {"from": u.edge.source, "to": u.edge.target, "cost": u.edge.cost,
         "lengthM": u.length_m, "lanes": u.lanes, "freeFlowTimeS": u.free_flow_time_s}
        for u in net.units.values()
    ]
    return json.dumps({"nodes": nodes, "edges": edges}, indent=2) + "\n"


def grid_network(rows: int = 3, cols: int = 3, length_m: float = 200.0, lanes: int = 2,
                 free_flow_s: float = 15.0) -> Network:
    """Bidirectional grid; node ``n{r}{c}``."""
    ids = [[f"n{r}{c}" for c in range(cols)] for r in range(rows)]
    edges = []
    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    edges.append(Edge(ids[r][c], ids[rr][cc], free_flow_s))
    g = RoadGraph([n for row in ids for n in row], sorted(edges))
    units = {e.unit_id: RoadUnit(e, length_m, lanes, free_flow_s) for e in g.edges}
    return Network(g, units, {n: IntersectionSpec() for n in g.nodes})


# -- physics -------------------------------------------------------------------

def congestion_index(u: RoadUnit, jam_density: float) -> float:
    density = u.vehicle_count / (u.length_m * u.lanes)
    return min(1.0, density / jam_density)


def travel_time(u: RoadUnit, chi: float, cfg: "SimConfig") -> float:
    return u.free_flow_time_s * (1.0 + cfg.delay_alpha * chi ** cfg.delay_beta)


@dataclass
class SignalPlan:
    intersection: str
    cycle_s: float
    lost_time_s: float
    green_s: dict[str, float]

    def share(self, approach: str) -> float:
        return self.green_s[approach] / self.cycle_s


def adjust_signal_splits(plan: SignalPlan, queues: dict[str, int], min_green_s: float) -> SignalPlan:
    """Split the available green in proportion to queues, with a minimum green per approach.

    Approaches pushed under the minimum are pinned to it and the rest is
    re-divided among the others; zero total queue gives an equal split.
    """
    approaches = sorted(plan.green_s)
    available = plan.cycle_s - plan.lost_time_s
    if available < min_green_s * len(approaches):
        raise InfeasibleCycle(
            f"{plan.intersection}: {available}s of green cannot give {len(approaches)} approaches {min_green_s}s each")
    free = list(approaches)
    pinned: dict[str, float] = {}
    while True:
        budget = available - min_green_s * len(pinned)
        weight = sum(queues.get(a, 0) for a in free)
        if weight > 0:
            green = {a: budget * queues.get(a, 0) / weight for a in free}
        else:
            green = {a: budget / len(free) for a in free}
        short = [a for a in free if green[a] < min_green_s]
        if not short:
            break
        for a in short:
            pinned[a] = min_green_s
            free.remove(a)
    green.update(pinned)
    # absorb rounding so the greens sum to the available time
    last = free[-1]
    green[last] = available - math.fsum(green[a] for a in approaches if a != last)
    return replace(plan, green_s={a: green[a] for a in approaches})


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class SpawnSpec:
    origin: str
    dest: str
    rate: float
    start_s: float = 0.0
    until_s: float = math.inf


@dataclass(frozen=True)
class LaneEvent:
    at_s: float
    unit: str
    lanes: int


@dataclass(frozen=True)
class SimConfig:
    duration_s: float = 600.0
    step_s: float = 1.0
    reroute_every_s: float = 30.0
    jam_density: float = 0.15
    delay_alpha: float = 4.0
    delay_beta: float = 4.0
    saturation_flow: float = 0.5
    spawn: tuple[SpawnSpec, ...] = ()
    events: tuple[LaneEvent, ...] = ()
    router: str = "rfd"
    adaptive_signals: bool = True
    seed: int = 0
    workers: int = 1
    rfd: dict = field(default_factory=dict)
    aco: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.step_s <= 0 or self.duration_s < 0 or self.reroute_every_s <= 0:
            raise ValidationError("step_s and reroute_every_s must be positive, duration_s non-negative")
        if self.router not in ROUTERS:
            raise ValidationError(f"router must be one of {ROUTERS}, got {self.router!r}")
        if any(s.rate < 0 for s in self.spawn):
            raise ValidationError("spawn rates must be non-negative")
        if self.jam_density <= 0 or self.saturation_flow <= 0:
            raise ValidationError("jam_density and saturation_flow must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["spawn"] = [asdict(s) for s in self.spawn]
        out["events"] = [asdict(e) for e in self.events]
        return out


_CONFIG_KEYS = {
    "durationS": "duration_s", "stepS": "step_s", "rerouteEveryS": "reroute_every_s",
    "jamDensity": "jam_density", "delayAlpha": "delay_alpha", "delayBeta": "delay_beta",
    "saturationFlow": "saturation_flow", "router": "router", "adaptiveSignals": "adaptive_signals",
    "seed": "seed", "workers": "workers", "rfd": "rfd", "aco": "aco",
}


def config_from_dict(doc: dict) -> SimConfig:
    """Build a SimConfig from the scenario file's camelCase document."""
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a JSON object")
    unknown = set(doc) - set(_CONFIG_KEYS) - {"spawn", "events"}
    if unknown:
        raise ParseError(f"unknown scenario keys: {sorted(unknown)}")
    kwargs = {_CONFIG_KEYS[k]: v for k, v in doc.items() if k in _CONFIG_KEYS}
    try:
        kwargs["spawn"] = tuple(
            SpawnSpec(s["origin"], s["dest"], float(s["rate"]), float(s.get("startS", 0.0)),
                      float(s.get("untilS", math.inf)))
            for s in doc.get("spawn", []))
        kwargs["events"] = tuple(LaneEvent(float(e["atS"]), e["unit"], int(e["lanes"])) for e in doc.get("events", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad spawn/event entry: {exc}") from exc
    return SimConfig(**kwargs)


def load_scenario(path) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(doc)


# -- state ---------------------------------------------------------------------

@dataclass
class Vehicle:
    id: int
    dest: str
    route: PathResult
    spawned_at_s: float
    position_edge_index: int = 0
    remaining_time_on_edge_s: float = 0.0
    entered: bool = False
    ready: bool = False
    arrived_at_s: Optional[float] = None
    reroutes: int = 0

    @property
    def unit_id(self) -> str:
        i = self.position_edge_index
        return f"{self.route.nodes[i]}>{self.route.nodes[i + 1]}"


@dataclass
class SimState:
    net: Network
    units: dict[str, RoadUnit]
    step_index: int = 0
    vehicles: dict[int, Vehicle] = field(default_factory=dict)
    finished: list[Vehicle] = field(default_factory=list)
    spawned: int = 0
    next_id: int = 0
    chi: dict[str, float] = field(default_factory=dict)
    tt: dict[str, float] = field(default_factory=dict)
    stop_line: dict[str, deque] = field(default_factory=dict)
    waiting: dict[str, deque] = field(default_factory=dict)
    credit: dict[str, float] = field(default_factory=dict)
    signals: dict[str, SignalPlan] = field(default_factory=dict)
    applied_events: set = field(default_factory=set)
    route_cache: dict = field(default_factory=dict)
    epoch: int = 0
    router_failures: int = 0
    rng: Optional[np.random.Generator] = None

    def time_s(self, cfg: SimConfig) -> float:
        return self.step_index * cfg.step_s

    @property
    def in_network(self) -> int:
        return len(self.vehicles)

    @property
    def arrived(self) -> int:
        return len(self.finished)


def init_state(net: Network, cfg: SimConfig) -> SimState:
    for s in cfg.spawn:
        net.graph.require(s.origin, s.dest)
        if s.origin == s.dest:
            raise ValidationError(f"spawn origin and destination coincide ({s.origin!r})")
        dijkstra_shortest_path(net.graph, s.origin, s.dest)
    for e in cfg.events:
        if e.unit not in net.units:
            raise ValidationError(f"event references unknown unit {e.unit!r}")
    units = {k: replace(u, vehicle_count=0) for k, u in net.units.items()}
    state = SimState(net, units, rng=np.random.default_rng(np.random.SeedSequence([cfg.seed & SEED_MASK])))
    for k in units:
        state.stop_line[k] = deque()
        state.credit[k] = 0.0
    for n in net.graph.nodes:
        state.waiting[n] = deque()
        approaches = net.incoming(n)
        if len(approaches) >= 2:
            spec = net.intersections.get(n, IntersectionSpec())
            share = (spec.cycle_s - spec.lost_time_s) / len(approaches)
            plan = SignalPlan(n, spec.cycle_s, spec.lost_time_s, {a: share for a in approaches})
            state.signals[n] = adjust_signal_splits(plan, {}, spec.min_green_s)
    _refresh_costs(state, cfg)
    return state


def _refresh_costs(state: SimState, cfg: SimConfig) -> None:
    for k, u in state.units.items():
        chi = congestion_index(u, cfg.jam_density)
        state.chi[k] = chi
        state.tt[k] = travel_time(u, chi, cfg)


def dynamic_graph(state: SimState) -> RoadGraph:
    costs = {(u.edge.source, u.edge.target): state.tt[k] for k, u in state.units.items()}
    return state.net.graph.with_costs(costs)


def free_flow_graph(net: Network) -> RoadGraph:
    return net.graph.with_costs({(u.edge.source, u.edge.target): u.free_flow_time_s for u in net.units.values()})


# -- routing -------------------------------------------------------------------

def _router_seed(cfg: SimConfig, epoch: int, node: str, dest: str) -> int:
    seq = np.random.SeedSequence([cfg.seed & SEED_MASK, epoch, zlib.crc32(node.encode()), zlib.crc32(dest.encode())])
    return int(seq.generate_state(1, np.uint64)[0] >> 1)


def compute_route(g: RoadGraph, node: str, dest: str, cfg: SimConfig, seed: int) -> PathResult:
    if cfg.router in ("dijkstra", "static"):
        return dijkstra_shortest_path(g, node, dest)
    if cfg.router == "rfd":
        return rfd_solve(g, node, dest, RfdParams(**{**cfg.rfd, "seed": seed}))[0]
    return aco_solve(g, node, dest, AcoParams(**{**cfg.aco, "seed": seed}))[0]


def _routes_for(state: SimState, cfg: SimConfig, pairs) -> dict:
    """Route every (node, dest) pair not yet cached this epoch, against one cost snapshot."""
    todo = sorted(p for p in set(pairs) if p not in state.route_cache)
    if not todo:
        return state.route_cache
    g = free_flow_graph(state.net) if cfg.router == "static" else dynamic_graph(state)

    def run(pair):
        node, dest = pair
        try:
            return compute_route(g, node, dest, cfg, _router_seed(cfg, state.epoch, node, dest))
        except RfdTrafficError as exc:
            return exc

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            found = list(pool.map(run, todo))
    else:
        found = [run(p) for p in todo]
    state.route_cache.update(zip(todo, found))
    return state.route_cache


def reroute(state: SimState, cfg: SimConfig) -> SimState:
    """Offer every en-route vehicle a new route; switch only on strict improvement."""
    state.epoch += 1
    state.route_cache = {}
    if cfg.router == "static":
        return state
    g = dynamic_graph(state)
    plans = []
    for v in sorted(state.vehicles.values(), key=lambda v: v.id):
        nodes = v.route.nodes
        keep = v.position_edge_index + 1 if v.entered else 0
        start = nodes[keep]
        if start == v.dest:
            continue
        plans.append((v, keep, start))
    cache = _routes_for(state, cfg, [(start, v.dest) for v, _, start in plans])
    for v, keep, start in plans:
        found = cache[(start, v.dest)]
        if isinstance(found, Exception):
            state.router_failures += 1
            log.warning("router failed for vehicle %d at %s: %s", v.id, start, found)
            continue
        nodes = v.route.nodes
        current = sum(g.edge(a, b).cost for a, b in zip(nodes[keep:], nodes[keep + 1:]))
        if found.total_cost < current - 1e-9 and not set(found.nodes[1:]) & set(nodes[:keep + 1]):
            head = nodes[:keep]
            new_nodes = head + found.nodes
            cost = sum(state.net.graph.edge(a, b).cost for a, b in zip(new_nodes, new_nodes[1:]))
            v.route = PathResult(new_nodes, cost)
            v.reroutes += 1
    return state


def _adjust_signals(state: SimState, cfg: SimConfig) -> None:
    for node, plan in state.signals.items():
        spec = state.net.intersections.get(node, IntersectionSpec())
        queues = {a: len(state.stop_line[a]) for a in plan.green_s}
        state.signals[node] = adjust_signal_splits(plan, queues, spec.min_green_s)


# -- stepping ------------------------------------------------------------------

def _admit(state: SimState, cfg: SimConfig, v: Vehicle, unit_id: str) -> bool:
    unit = state.units[unit_id]
    if unit.vehicle_count >= unit.jam_capacity(cfg.jam_density):
        return False
    unit.vehicle_count += 1
    v.remaining_time_on_edge_s = state.tt[unit_id]
    v.ready = False
    return True


def sim_step(state: SimState, cfg: SimConfig) -> SimState:
    """Advance one tick of ``cfg.step_s`` seconds."""
    t0 = state.time_s(cfg)
    state.step_index += 1
    now = state.time_s(cfg)
    step = cfg.step_s

    for i, ev in enumerate(cfg.events):
        if i not in state.applied_events and ev.at_s <= t0:
            state.applied_events.add(i)
            unit = state.units[ev.unit]
            state.units[ev.unit] = replace(unit, lanes=ev.lanes)

    # spawn
    new = []
    for s in cfg.spawn:
        if s.rate <= 0 or not (s.start_s <= t0 < s.until_s):
            continue
        k = int(state.rng.poisson(s.rate * step))
        for _ in range(k):
            new.append(s)
    if new:
        cache = _routes_for(state, cfg, [(s.origin, s.dest) for s in new])
        fallback = free_flow_graph(state.net)
        for s in new:
            route = cache[(s.origin, s.dest)]
            if isinstance(route, Exception):
                state.router_failures += 1
                route = dijkstra_shortest_path(fallback, s.origin, s.dest)
            route = PathResult(route.nodes, sum(state.net.graph.edge(a, b).cost for a, b in zip(route.nodes, route.nodes[1:])))
            v = Vehicle(state.next_id, s.dest, route, now)
            state.next_id += 1
            state.spawned += 1
            state.vehicles[v.id] = v
            state.waiting[s.origin].append(v.id)

    # travel
    for vid in sorted(state.vehicles):
        v = state.vehicles[vid]
        if not v.entered or v.ready:
            continue
        v.remaining_time_on_edge_s = max(0.0, v.remaining_time_on_edge_s - step)
        if v.remaining_time_on_edge_s <= 0:
            v.ready = True
            state.stop_line[v.unit_id].append(vid)

    # discharge at intersections
    for uid in sorted(state.stop_line):
        queue = state.stop_line[uid]
        unit = state.units[uid]
        while queue and state.vehicles[queue[0]].route.nodes[-1] == unit.edge.target and \
                state.vehicles[queue[0]].position_edge_index == len(state.vehicles[queue[0]].route.nodes) - 2:
            v = state.vehicles.pop(queue.popleft())
            unit.vehicle_count -= 1
            v.arrived_at_s = now
            state.finished.append(v)
        if not queue:
            state.credit[uid] = 0.0
            continue
        plan = state.signals.get(unit.edge.target)
        share = plan.share(uid) if plan is not None else 1.0
        per_tick = cfg.saturation_flow * unit.lanes * share * step
        state.credit[uid] = min(state.credit[uid] + per_tick, per_tick + 1.0)
        while queue and state.credit[uid] >= 1.0:
            v = state.vehicles[queue[0]]
            nodes = v.route.nodes
            if v.position_edge_index == len(nodes) - 2:
                # reached destination
                queue.popleft()
                state.vehicles.pop(v.id)
                unit.vehicle_count -= 1
                v.arrived_at_s = now
                state.finished.append(v)
                continue
            nxt = f"{nodes[v.position_edge_index + 1]}>{nodes[v.position_edge_index + 2]}"
            if not _admit(state, cfg, v, nxt):
                break
            queue.popleft()
            unit.vehicle_count -= 1
            v.position_edge_index += 1
            state.credit[uid] -= 1.0
        if not queue:
            state.credit[uid] = 0.0

    # entries at origins
    for node in sorted(state.waiting):
        wait = state.waiting[node]
        while wait:
            v = state.vehicles[wait[0]]
            first = f"{v.route.nodes[0]}>{v.route.nodes[1]}"
            if not _admit(state, cfg, v, first):
                break
            wait.popleft()
            v.entered = True
            v.position_edge_index = 0

    _refresh_costs(state, cfg)
    if state.spawned != state.in_network + state.arrived:
        raise AssertionError("vehicle conservation violated")

    if now % cfg.reroute_every_s == 0 or math.isclose(now % cfg.reroute_every_s, cfg.reroute_every_s):
        reroute(state, cfg)
        if cfg.adaptive_signals:
            _adjust_signals(state, cfg)
    return state


# -- scenario runner -----------------------------------------------------------

@dataclass
class Metrics:
    vehicles: list[dict]
    network: list[dict]
    state: SimState

    def mean_travel_time(self) -> float:
        """Mean time in network over all spawned vehicles; unfinished trips count until the end."""
        if not self.vehicles:
            return 0.0
        return sum(r["travelS"] for r in self.vehicles) / len(self.vehicles)


VEHICLE_FIELDS = ["id", "spawnedAtS", "arrivedAtS", "travelS", "reroutes"]
NETWORK_FIELDS = ["timeS", "meanChi", "vehiclesInNetwork"]

SensorHook = Callable[[SimState, SimConfig], None]


def run_scenario(net: Network, cfg: SimConfig, on_step: Optional[SensorHook] = None) -> Metrics:
    state = init_state(net, cfg)
    steps = int(round(cfg.duration_s / cfg.step_s))
    rows = []
    for _ in range(steps):
        sim_step(state, cfg)
        chis = list(state.chi.values())
        rows.append({
            "timeS": state.time_s(cfg),
            "meanChi": sum(chis) / len(chis) if chis else 0.0,
            "vehiclesInNetwork": state.in_network,
        })
        if on_step is not None:
            on_step(state, cfg)
    end = state.time_s(cfg)
    vehicles = []
    for v in sorted(state.finished + list(state.vehicles.values()), key=lambda v: v.id):
        stop = v.arrived_at_s if v.arrived_at_s is not None else end
        vehicles.append({
            "id": v.id,
            "spawnedAtS": v.spawned_at_s,
            "arrivedAtS": v.arrived_at_s if v.arrived_at_s is not None else "",
            "travelS": stop - v.spawned_at_s,
            "reroutes": v.reroutes,
        })
    return Metrics(vehicles, rows, state)


def rows_to_csv(rows: list[dict], header: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def shock_scenario(seed: int = 0, router: str = "rfd", **overrides) -> SimConfig:
    """3x3 grid; through traffic n10 -> n22 whose free-flow route uses n11>n12.

    That unit drops from two lanes to one at 300 s, halving both its jam
    capacity and its discharge into the signalized n12 intersection.
    """
    spawn = (
        SpawnSpec("n10", "n22", 0.3, 0.0, 900.0),
        SpawnSpec("n00", "n22", 0.05, 0.0, 900.0),
        SpawnSpec("n01", "n21", 0.05, 0.0, 900.0),
        SpawnSpec("n20", "n02", 0.05, 0.0, 900.0),
    )
    base = dict(duration_s=1500.0, spawn=spawn, events=(LaneEvent(300.0, "n11>n12", 1),),
                router=router, seed=seed)
    base.update(overrides)
    return SimConfig(**base)
