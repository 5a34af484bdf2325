import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracle import best_path
from rfdtraffic.errors import InfeasibleParams, NoDescent, NotBlocked, UnknownNode, Unreachable
from rfdtraffic.graph import RoadGraph, dijkstra_shortest_path, graph_from_edges, random_graph, validate_path
from rfdtraffic.rfd import (
    Drop, Landscape, RfdParams, advance_drop, apply_deltas, deposit_sediment, dump_landscape,
    extract_steepest_path, init_landscape, iterate, mean_gradient, run_iteration, solve, transition_weights,
)

# gradient-proportional erosion with no critical slope, as in the textbook arithmetic
PLAIN = RfdParams(erosion_rate=0.01, critical_slope=0.0, stable_iterations=10)


class Fixed:
    def __init__(self, *values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def land(dest, **alt):
    return Landscape(dict(alt), dest)


def two_node():
    return graph_from_edges([("o", "d", 1)])


# -- landscape -------------------------------------------------------------------

def test_init_landscape(g1):
    assert init_landscape(g1, "D", RfdParams()).altitude == {"S": 100, "M": 100, "D": 0}
    single = RoadGraph(["x"], [])
    assert init_landscape(single, "x", RfdParams()).altitude == {"x": 0}
    with pytest.raises(UnknownNode):
        init_landscape(g1, "Q", RfdParams())


def test_hole_pinned_over_many_iterations(g1):
    p = RfdParams(drops_per_iteration=2, seed=3)
    L = init_landscape(g1, "D", p)
    for k in range(10_000):
        L = run_iteration(g1, L, "S", p, k)
        assert L.altitude["D"] == 0.0
    assert all(p.min_altitude <= L.altitude[v] <= p.initial_altitude for v in ("S", "M"))


# -- transition weights ------------------------------------------------------------

def test_weight_downhill():
    g = graph_from_edges([("i", "j", 2)])
    w = transition_weights(g, land("x", i=100, j=90, x=0), Drop("i", ["i"]), PLAIN)
    assert w[g.edge("i", "j")] == 5.0


def test_weight_flat():
    g = graph_from_edges([("i", "j", 1)])
    w = transition_weights(g, land("x", i=100, j=100, x=0), Drop("i", ["i"]), PLAIN)
    assert w[g.edge("i", "j")] == pytest.approx(0.1)


def test_weight_uphill_is_zero():
    g = graph_from_edges([("i", "j", 1)])
    w = transition_weights(g, land("x", i=50, j=80, x=0), Drop("i", ["i"]), PLAIN)
    assert w[g.edge("i", "j")] == 0.0


def test_climb_offered_only_beside_an_exit():
    g = graph_from_edges([("i", "j", 1), ("i", "k", 1)])
    p = RfdParams(critical_slope=2.0, climb_ratio=0.5)
    w = transition_weights(g, land("k", i=50, j=80, k=0), Drop("i", ["i"]), p)
    assert w[g.edge("i", "j")] == 1.0 and w[g.edge("i", "k")] == 50.0
    pit = transition_weights(g, land("x", i=50, j=80, k=60, x=0), Drop("i", ["i"]), p)
    assert set(pit.values()) == {0.0}


def test_no_instant_backtrack():
    g = graph_from_edges([("i", "a", 1), ("i", "b", 1)])
    L = land("x", i=100, a=100, b=100, x=0)
    w = transition_weights(g, L, Drop("i", ["a", "i"]), PLAIN)
    assert w[g.edge("i", "a")] == 0.0 and w[g.edge("i", "b")] > 0
    # the previous node stays available when it is the only way on
    g1 = graph_from_edges([("i", "a", 1)])
    w = transition_weights(g1, land("x", i=100, a=100, x=0), Drop("i", ["a", "i"]), PLAIN)
    assert w[g1.edge("i", "a")] > 0


def test_dead_end_has_no_weights():
    g = RoadGraph(["i", "x"], [])
    assert transition_weights(g, land("x", i=1, x=0), Drop("i", ["i"]), PLAIN) == {}


# -- drops ---------------------------------------------------------------------

def test_forced_downhill_move_erodes():
    g = graph_from_edges([("i", "j", 2), ("j", "x", 1)])
    d, deltas = advance_drop(g, land("x", i=100, j=90, x=0), Drop("i", ["i"]), Fixed(0.5), PLAIN.resolve(g))
    assert d.at == "j" and d.alive and d.path == ["i", "j"]
    assert len(deltas) == 1 and deltas[0].node == "i"
    assert deltas[0].delta == pytest.approx(-0.05)


def test_move_into_hole_completes():
    g = two_node()
    d, deltas = advance_drop(g, land("d", o=100, d=0), Drop("o", ["o"]), Fixed(0.0), PLAIN.resolve(g))
    assert not d.alive and d.status == "completed" and d.path == ["o", "d"]
    assert deltas[0].delta == pytest.approx(-1.0)


def test_blocked_drop_deposits_and_dies():
    g = graph_from_edges([("p", "a", 1), ("p", "b", 1), ("a", "x", 1)])
    L = land("x", p=50, a=70, b=90, x=0)
    d, deltas = advance_drop(g, L, Drop("p", ["p"]), Fixed(), PLAIN.resolve(g))
    assert not d.alive and d.status == "blocked" and d.path == ["p"]
    assert [(x.node, x.delta) for x in deltas] == [("p", 20.0)]


def test_step_cap_kills_without_moving():
    g = graph_from_edges([("a", "b", 1), ("b", "a", 1), ("c", "a", 1)])
    p = RfdParams(max_steps=2, critical_slope=0.0)
    d = Drop("a", ["a", "b", "a"])
    out, deltas = advance_drop(g, land("c", a=100, b=100, c=0), d, Fixed(0.1), p)
    assert out.status == "expired" and out.path == d.path and deltas == []


def test_deposit_sediment_rules():
    g = graph_from_edges([("n", "a", 1), ("n", "b", 1)])
    L = land("x", n=50, a=70, b=80, x=0)
    assert deposit_sediment(g, L, "n", PLAIN).delta == 20.0
    half = RfdParams(deposit_rate=0.5)
    assert deposit_sediment(g, L, "n", half).delta == 10.0
    with pytest.raises(NotBlocked):
        deposit_sediment(g, land("x", n=50, a=40, b=80, x=0), "n", PLAIN)


# -- iteration barrier ---------------------------------------------------------

def test_single_edge_iteration_arithmetic():
    g = two_node()
    p = RfdParams(erosion_rate=0.01, critical_slope=0.0, drops_per_iteration=1)
    L = run_iteration(g, init_landscape(g, "d", p), "o", p, 0)
    assert L.altitude["o"] == pytest.approx(99.0)
    p2 = RfdParams(erosion_rate=0.01, critical_slope=0.0, drops_per_iteration=2)
    L = run_iteration(g, init_landscape(g, "d", p2), "o", p2, 0)
    assert L.altitude["o"] == pytest.approx(98.0)


def test_clamp_to_min_altitude():
    g = two_node()
    p = RfdParams(erosion_rate=50.0, critical_slope=0.0, drops_per_iteration=1)
    L = run_iteration(g, init_landscape(g, "d", p), "o", p, 0)
    assert L.altitude["o"] == p.min_altitude
    assert L.altitude["d"] == 0.0


def test_critical_slope_leaves_residual_gradient():
    g = two_node()
    p = RfdParams(erosion_rate=0.5, critical_slope=10.0, drops_per_iteration=1)
    L = init_landscape(g, "d", p)
    for k in range(50):
        L = run_iteration(g, L, "o", p, k)
    # erosion stops once the slope reaches the critical value
    assert L.altitude["o"] == pytest.approx(10.0)


def test_pit_is_filled_to_lowest_neighbour(g2):
    p = RfdParams(drops_per_iteration=4).resolve(g2)
    L = land("D", S=50.0, T=10.0, M=30.0, D=0.0)
    L2, outcome = iterate(g2, L, "T", p, 0)
    assert outcome.blocked == 4 and outcome.deposited == {"T"}
    # four fills of +40 are summed at the barrier and clamped at A0
    assert L2.altitude["T"] == p.initial_altitude
    single = RfdParams(drops_per_iteration=1).resolve(g2)
    L3, _ = iterate(g2, L, "T", single, 0)
    assert L3.altitude["T"] == 50.0


def test_apply_deltas_respects_floor():
    from rfdtraffic.rfd import ErosionDelta
    L = land("d", a=100.0, b=60.0, d=0.0)
    p = RfdParams()
    out = apply_deltas(L, [ErosionDelta("a", -30.0, 80.0), ErosionDelta("a", -30.0, 90.0)], p)
    assert out.altitude["a"] == 80.0
    out = apply_deltas(L, [ErosionDelta("a", -5.0, 80.0)], p)
    assert out.altitude["a"] == 95.0
    out = apply_deltas(L, [ErosionDelta("d", -5.0), ErosionDelta("b", 70.0)], p)
    assert out.altitude["d"] == 0.0 and out.altitude["b"] == 100.0


# -- extraction ------------------------------------------------------------------

def test_extract_examples(g1):
    assert extract_steepest_path(g1, land("D", S=2, M=1, D=0), "S").nodes == ("S", "M", "D")
    assert extract_steepest_path(g1, land("D", S=2, M=3, D=0), "S").nodes == ("S", "D")
    chain = graph_from_edges([("S", "A", 1), ("A", "D", 1)])
    with pytest.raises(NoDescent) as info:
        extract_steepest_path(chain, init_landscape(chain, "D", RfdParams()), "S")
    assert info.value.partial == ["S"]


def test_extract_tie_takes_smallest_target():
    g = graph_from_edges([("S", "b", 1), ("S", "a", 1), ("a", "D", 1), ("b", "D", 1)])
    assert extract_steepest_path(g, land("D", S=2, a=1, b=1, D=0), "S").nodes == ("S", "a", "D")


def test_mean_gradient_identity(g1):
    for alt in ({"S": 2.5, "M": 1.25}, {"S": 7.0, "M": 1.0}):
        L = land("D", D=0, **alt)
        path = extract_steepest_path(g1, L, "S")
        assert mean_gradient(L, path) == pytest.approx(L.altitude["S"] / path.total_cost, abs=1e-9)


# -- solve -----------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_solve_g1(g1, seed):
    path, stats = solve(g1, "S", "D", RfdParams(seed=seed))
    assert path.nodes == ("S", "M", "D") and path.total_cost == 2
    assert stats.converged and stats.launched == 32 * stats.iterations


def test_solve_identity(g1):
    path, stats = solve(g1, "S", "S")
    assert path.nodes == ("S",) and path.total_cost == 0 and stats.iterations == 0


def test_solve_unreachable():
    g = graph_from_edges([("A", "B", 1), ("C", "B", 1)])
    with pytest.raises(Unreachable):
        solve(g, "A", "C")


@pytest.mark.parametrize("seed", range(5))
def test_solve_trap(g2, seed):
    path, stats = solve(g2, "S", "D", RfdParams(seed=seed))
    assert path.nodes == dijkstra_shortest_path(g2, "S", "D").nodes == ("S", "M", "D")
    L = stats.landscape
    assert L.altitude["T"] >= L.altitude["S"] - 1e-9


def test_max_iterations_returns_best_effort(g1):
    path, stats = solve(g1, "S", "D", RfdParams(max_iterations=3, stable_iterations=10))
    assert not stats.converged and stats.iterations == 3
    validate_path(g1, path, "S", "D")


def test_params_validation():
    for bad in (dict(initial_altitude=0), dict(deposit_rate=1.5), dict(drops_per_iteration=0),
                dict(flat_weight=200), dict(climb_ratio=1.0), dict(critical_slope=-1), dict(workers=0)):
        with pytest.raises(InfeasibleParams):
            RfdParams(**bad)


def test_dump_landscape():
    assert dump_landscape(land("D", S=2.5, D=0.0)) == "D,0.0\nS,2.5\n"


@st.composite
def solvable(draw):
    n = draw(st.integers(2, 8))
    m = draw(st.integers(n - 1, min(3 * n, n * (n - 1))))
    return random_graph(n, m, (1, 10), draw(st.integers(0, 2 ** 32))), draw(st.integers(0, 2 ** 32))


@settings(max_examples=40, deadline=None)
@given(solvable())
def test_invariants_on_random_instances(case):
    g, seed = case
    o, d = g.backbone[0], g.backbone[-1]
    p = RfdParams(seed=seed)
    violations = []

    def watch(k, L, outcome):
        if L.altitude[d] != 0.0:
            violations.append(("hole", k))
        for v, a in L.altitude.items():
            if v != d and not (p.min_altitude <= a <= p.initial_altitude):
                violations.append((v, a))
        try:
            path = extract_steepest_path(g, L, o)
        except NoDescent:
            return
        alts = [L.altitude[v] for v in path.nodes]
        assert all(x > y for x, y in zip(alts, alts[1:]))
        assert mean_gradient(L, path) == pytest.approx(L.altitude[o] / path.total_cost, abs=1e-9)

    path, stats = solve(g, o, d, p, observer=watch)
    assert violations == []
    validate_path(g, path, o, d)
    edges = [(e.source, e.target, e.cost) for e in g.edges]
    assert path.total_cost >= best_path(edges, o, d)[0] - 1e-9


@pytest.mark.parametrize("workers", [2, 4])
def test_thread_count_does_not_change_results(workers):
    g = random_graph(12, 30, (1, 10), 5)
    o, d = g.backbone[0], g.backbone[-1]
    a = solve(g, o, d, RfdParams(seed=11))
    b = solve(g, o, d, RfdParams(seed=11, workers=workers))
    assert a[0] == b[0]
    assert a[1].landscape.altitude == b[1].landscape.altitude
    assert a[1].row() == b[1].row()
