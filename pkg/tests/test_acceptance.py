"""Acceptance suite: one test and one printed PASS/FAIL line per criterion."""

import random
import time

import pytest

from conftest import ACCEPTANCE_LINES, BACKEDGE_EDGES, G2_EDGES
from rfdtraffic.baselines import AcoParams, WalkParams, aco_cycle_pressure, aco_solve, has_repeat, random_walk_solve, walk_coverage
from rfdtraffic.errors import NoDescent
from rfdtraffic.graph import Edge, dijkstra_shortest_path, graph_from_edges, random_graph, validate_path
from rfdtraffic.rfd import RfdParams, extract_steepest_path, init_landscape, iterate, mean_gradient, solve
from rfdtraffic.sim import (
    NETWORK_FIELDS, VEHICLE_FIELDS, SimConfig, SpawnSpec, grid_network, rows_to_csv, run_scenario, shock_scenario,
)
from rfdtraffic.telemetry import SensorReading, decode_reading, encode_reading, replay, simulate_with_telemetry

GRAPHS = 50
SEEDS = 30


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


class SuiteWatch:
    """Observer that checks landscape bounds and the gradient identity after every iteration."""

    def __init__(self, g, origin, p):
        self.g, self.origin, self.p = g, origin, p
        self.iterations = 0
        self.bound_violations = 0
        self.identity_violations = 0
        self.extracted = 0
        self.repeats = 0

    def __call__(self, k, L, outcome):
        self.iterations += 1
        p = self.p
        if L.altitude[L.destination] != 0.0:
            self.bound_violations += 1
        for v, a in L.altitude.items():
            if v != L.destination and not (p.min_altitude <= a <= p.initial_altitude):
                self.bound_violations += 1
        try:
            path = extract_steepest_path(self.g, L, self.origin)
        except NoDescent:
            return
        self.extracted += 1
        self.repeats += has_repeat(path.nodes)
        if abs(mean_gradient(L, path) - L.altitude[self.origin] / path.total_cost) > 1e-9:
            self.identity_violations += 1


@pytest.fixture(scope="module")
def oracle_suite():
    """50 random graphs x 30 seeds; origin is the backbone head, destination its tail."""
    results = []
    watches = []
    start = time.perf_counter()
    for gi in range(GRAPHS):
        g = random_graph(20, 60, (1, 10), 1000 + gi)
        o, d = g.backbone[0], g.backbone[-1]
        best = dijkstra_shortest_path(g, o, d).total_cost
        for seed in range(SEEDS):
            p = RfdParams(seed=seed)
            watch = SuiteWatch(g, o, p)
            path, stats = solve(g, o, d, p, observer=watch)
            try:
                validate_path(g, path, o, d)
                valid = True
            except Exception:
                valid = False
            results.append((abs(path.total_cost - best) <= 1e-9, valid, stats))
            watches.append(watch)
    elapsed = time.perf_counter() - start
    return results, watches, elapsed


def test_criterion_1_oracle_equivalence(oracle_suite):
    results, watches, elapsed = oracle_suite
    # observer work is included in the timing, so the solver alone is faster still
    n = len(results)
    optimal = sum(r[0] for r in results)
    valid = sum(r[1] for r in results)
    ok = optimal >= 0.9 * n and valid == n and elapsed < 60.0
    report(1, ok, f"optimal {optimal}/{n} ({optimal / n:.1%}, need >= 90%), valid {valid}/{n}, "
                  f"runtime {elapsed:.1f}s (limit 60s)")
    assert ok


def test_criterion_2_landscape_invariants(oracle_suite):
    _, watches, _ = oracle_suite
    iterations = sum(w.iterations for w in watches)
    violations = sum(w.bound_violations for w in watches)
    ok = violations == 0 and iterations > 0
    report(2, ok, f"{violations} bound violations over {iterations} iterations")
    assert ok


def test_criterion_3_blind_alley_healing():
    g = graph_from_edges(G2_EDGES)
    oracle = dijkstra_shortest_path(g, "S", "D")
    matched = 0
    healed = 0
    deposits = 0
    for seed in range(30):
        path, stats = solve(g, "S", "D", RfdParams(seed=seed))
        matched += stats.converged and path == oracle
        L = stats.landscape
        lowest = min(L.altitude[e.target] for e in g.out_edges("T"))
        ok_now = L.altitude["T"] >= lowest - 1e-9
        # every recorded deposit must have lifted its node to the lowest neighbour
        ok_dep = all(alt >= low - 1e-9 for low, alt in stats.last_deposit.values())
        deposits += stats.deposits
        healed += ok_now and ok_dep
    ok = matched == 30 and healed == 30
    report(3, ok, f"oracle path {matched}/30, trap altitude >= lowest neighbour {healed}/30 "
                  f"({deposits} deposits recorded)")
    assert ok


def test_criterion_4_shortcut_preference():
    base = graph_from_edges([("S", "A", 1), ("A", "B", 1), ("B", "D", 1)])
    shortcut = base.with_edges([Edge("S", "D", 1)])
    switched = 0
    identity_bad = 0
    extracted = 0
    for seed in range(30):
        p = RfdParams(seed=seed).resolve(base)
        L = init_landscape(base, "D", p)
        for k in range(50):
            L, _ = iterate(base, L, "S", p, k)
            try:
                path = extract_steepest_path(base, L, "S")
            except NoDescent:
                continue
            extracted += 1
            identity_bad += abs(mean_gradient(L, path) - L.altitude["S"] / path.total_cost) > 1e-9
        assert path.nodes == ("S", "A", "B", "D")
        first = None
        for k in range(50, 250):
            L, _ = iterate(shortcut, L, "S", p, k)
            try:
                path = extract_steepest_path(shortcut, L, "S")
            except NoDescent:
                continue
            extracted += 1
            identity_bad += abs(mean_gradient(L, path) - L.altitude["S"] / path.total_cost) > 1e-9
            if first is None and path.nodes == ("S", "D"):
                first = k - 49
        switched += first is not None
    ok = switched >= 27 and identity_bad == 0
    report(4, ok, f"switched to shortcut in {switched}/30 seeds (need >= 27); gradient identity "
                  f"violations {identity_bad}/{extracted}")
    assert ok


def test_criterion_4b_identity_on_suite_paths(oracle_suite):
    _, watches, _ = oracle_suite
    bad = sum(w.identity_violations for w in watches)
    total = sum(w.extracted for w in watches)
    ok = bad == 0 and total > 0
    report("4b", ok, f"gradient identity violations {bad}/{total} extracted paths in the oracle suite")
    assert ok


def test_criterion_5_cycle_contrast(oracle_suite):
    g = graph_from_edges(BACKEDGE_EDGES)
    pressures = [aco_cycle_pressure(g, "S", "D", AcoParams(seed=s), walks=1000) for s in range(1, 6)]
    rfd_paths = [solve(g, "S", "D", RfdParams(seed=s))[0] for s in range(1, 6)]
    _, watches, _ = oracle_suite
    repeats = sum(has_repeat(p.nodes) for p in rfd_paths) + sum(w.repeats for w in watches)
    total = len(rfd_paths) + sum(w.extracted for w in watches)
    ok = all(x > 0 for x in pressures) and repeats == 0
    report(5, ok, f"ACO cycle pressure {[round(x, 3) for x in pressures]}; RFD repeated-node paths "
                  f"{repeats}/{total}")
    assert ok


def test_criterion_6_parallel_walk_coverage():
    wins = 0
    for seed in range(100):
        g = random_graph(20, 60, (1, 10), seed)
        o = g.backbone[0]
        many = walk_coverage(g, o, WalkParams(walkers=8, max_steps=100, seed=seed))
        one = walk_coverage(g, o, WalkParams(walkers=1, max_steps=800, seed=seed))
        wins += many >= one
    ok = wins >= 95
    report(6, ok, f"8x100 coverage >= 1x800 in {wins}/100 seeds (need >= 95)")
    assert ok


def test_criterion_7_simulator():
    net = grid_network()
    # conservation is asserted inside every step; the hook double-checks from outside
    broken = []

    def hook(state, cfg):
        if state.spawned != state.in_network + state.arrived:
            broken.append(state.time_s(cfg))

    drain = SimConfig(duration_s=900, router="rfd", seed=1, spawn=(
        SpawnSpec("n00", "n22", 0.2, 0, 300), SpawnSpec("n22", "n00", 0.2, 0, 300)))
    drained = run_scenario(net, drain, on_step=hook).state.in_network == 0

    a = run_scenario(net, shock_scenario(seed=0, router="rfd", duration_s=600), on_step=hook)
    b = run_scenario(net, shock_scenario(seed=0, router="rfd", duration_s=600))
    identical = (rows_to_csv(a.vehicles, VEHICLE_FIELDS) == rows_to_csv(b.vehicles, VEHICLE_FIELDS)
                 and rows_to_csv(a.network, NETWORK_FIELDS) == rows_to_csv(b.network, NETWORK_FIELDS))

    wins = 0
    gaps = []
    for seed in range(20):
        rfd = run_scenario(net, shock_scenario(seed=seed, router="rfd"), on_step=hook).mean_travel_time()
        static = run_scenario(net, shock_scenario(seed=seed, router="static"), on_step=hook).mean_travel_time()
        wins += rfd <= static
        gaps.append(static - rfd)
    ok = not broken and drained and identical and wins >= 16
    report(7, ok, f"conservation breaches {len(broken)}, drained {drained}, byte-identical {identical}, "
                  f"rfd <= static in {wins}/20 seeds (need >= 16), mean saving {sum(gaps) / 20:.1f}s")
    assert ok


def test_criterion_8_telemetry():
    rng = random.Random(8)
    alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-."
    trips = 0
    for _ in range(10_000):
        unit = "".join(rng.choices(alphabet, k=rng.randint(1, 8))) + ">" + \
               "".join(rng.choices(alphabet, k=rng.randint(1, 8)))
        r = SensorReading(unit, rng.randint(0, 2 ** 48), rng.randint(0, 10 ** 5), rng.uniform(0, 60))
        trips += decode_reading(encode_reading(r)) == r

    cfg = SimConfig(duration_s=600, router="dijkstra", seed=8, spawn=(
        SpawnSpec("n00", "n22", 0.4, 0, 500), SpawnSpec("n20", "n02", 0.3, 0, 500), SpawnSpec("n10", "n12", 0.3, 0, 500)))
    _, tap, problems = simulate_with_telemetry(grid_network(), cfg)

    clean_map, clean = replay(tap.lines, grid_network())
    noisy = list(tap.lines)
    junk = [b"v2,n00>n01,5,5,5.0\n", b"???\n", b"v1,n00>n01,-1,1,1.0\n", b"v1,n11>n12,10,x,2.0\n"]
    for _ in range(len(noisy) // 10):
        noisy.insert(rng.randrange(len(noisy) + 1), rng.choice(junk))
    noisy_map, dirty = replay(noisy, grid_network())
    robust = (noisy_map.chi == clean_map.chi and noisy_map.stale == clean_map.stale
              and noisy_map.as_of_ms == clean_map.as_of_ms and dirty.parsed == clean.parsed
              and dirty.malformed == len(noisy) - len(tap.lines))
    ok = trips == 10_000 and not problems and robust
    report(8, ok, f"round-trips {trips}/10000, pipeline mismatches {len(problems)} over "
                  f"{len(tap.lines)} readings, garbage-injection counters only: {robust}")
    assert ok


def test_criterion_9_thread_determinism():
    g = random_graph(20, 60, (1, 10), 99)
    o, d = g.backbone[0], g.backbone[-1]
    checks = {}
    r1 = solve(g, o, d, RfdParams(seed=5, workers=1))
    r4 = solve(g, o, d, RfdParams(seed=5, workers=4))
    checks["rfd"] = (r1[0] == r4[0] and r1[1].row() == r4[1].row()
                     and r1[1].landscape.altitude == r4[1].landscape.altitude)
    a1 = aco_solve(g, o, d, AcoParams(seed=5, workers=1))
    a4 = aco_solve(g, o, d, AcoParams(seed=5, workers=4))
    checks["aco"] = a1 == a4
    w1 = random_walk_solve(g, o, d, WalkParams(seed=5, workers=1))
    w4 = random_walk_solve(g, o, d, WalkParams(seed=5, workers=4))
    checks["walk"] = w1 == w4
    cfg = shock_scenario(seed=5, router="rfd", duration_s=500)
    s1 = run_scenario(grid_network(), cfg)
    s4 = run_scenario(grid_network(), SimConfig(**{**cfg.__dict__, "workers": 4}))
    checks["sim"] = (rows_to_csv(s1.vehicles, VEHICLE_FIELDS) == rows_to_csv(s4.vehicles, VEHICLE_FIELDS)
                     and rows_to_csv(s1.network, NETWORK_FIELDS) == rows_to_csv(s4.network, NETWORK_FIELDS))
    ok = all(checks.values())
    report(9, ok, "identical at 1 and 4 workers: " + ", ".join(f"{k}={v}" for k, v in checks.items()))
    assert ok
