"""Command line entry point: route, compare, simulate, replay."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .baselines import AcoParams, WalkParams, aco_cycle_pressure, aco_solve, has_repeat, random_walk_solve
from .errors import NotConverged, NotFound, ParseError, RfdTrafficError, Unreachable
from .graph import RoadGraph, dijkstra_shortest_path, random_graph, read_graph
from .rfd import RfdParams, solve as rfd_solve
from .sim import NETWORK_FIELDS, VEHICLE_FIELDS, SimConfig, load_scenario, read_network, rows_to_csv
from .telemetry import DEFAULT_WINDOW_MS, replay, simulate_with_telemetry

log = logging.getLogger("rfdtraffic")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NO_RESULT = 2
EXIT_UNREACHABLE = 3
EXIT_INVARIANT = 4

ALGOS = ("rfd", "aco", "walk", "dijkstra")
PARAM_TYPES = {"rfd": RfdParams, "aco": AcoParams, "walk": WalkParams}


class InputError(Exception):
    pass


# -- helpers -------------------------------------------------------------------

def parse_overrides(items: Sequence[str]) -> dict[str, object]:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise InputError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out[key.strip()] = value
    return out


def build_params(cls, overrides: dict, algo: Optional[str] = None, seed: Optional[int] = None):
    """Apply ``key`` or ``algo.key`` overrides that name a field of ``cls``."""
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in overrides.items():
        prefix, _, name = key.rpartition(".")
        if prefix and prefix != algo:
            continue
        if name in names:
            kwargs[name] = value
    if seed is not None:
        kwargs["seed"] = seed
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InputError(str(exc)) from exc


def check_overrides(overrides: dict, classes: dict) -> None:
    for key in overrides:
        prefix, _, name = key.rpartition(".")
        pool = [classes[prefix]] if prefix in classes else ([] if prefix else list(classes.values()))
        if not any(name in {f.name for f in dataclasses.fields(c)} for c in pool):
            raise InputError(f"unknown parameter {key!r}")


def load_graph_arg(spec: str) -> RoadGraph:
    if spec.startswith("random:"):
        try:
            n, m, seed = (int(x) for x in spec[len("random:"):].split(","))
        except ValueError as exc:
            raise InputError(f"expected random:n,m,seed, got {spec!r}") from exc
        return random_graph(n, m, (1, 10), seed)
    return read_graph(spec)


def parse_seeds(text: Optional[str], trials: int, default: int) -> list[int]:
    """``5`` (first seed), ``0..9`` (inclusive range) or ``1,4,9`` (explicit list)."""
    if not text:
        return [default + t for t in range(trials)]
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            seeds = list(range(int(lo), int(hi) + 1)) if hi else [int(lo) + t for t in range(trials)]
        elif "," in text:
            seeds = [int(x) for x in text.split(",") if x]
        else:
            seeds = [int(text) + t for t in range(trials)]
    except ValueError as exc:
        raise InputError(f"bad seed list {text!r}") from exc
    if len(seeds) < trials:
        raise InputError(f"{trials} trials need {trials} seeds, got {len(seeds)}")
    return seeds[:trials]


def write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def write_stanza(out_dir: Path, command: str, config: dict) -> Path:
    """Resolved configuration written next to every output so the run can be repeated."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{command}.config.json"
    doc = {"command": command, "version": __version__, **config}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if isinstance(obj, (set, tuple)):
        return sorted(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _params_dict(p) -> dict:
    return {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in dataclasses.asdict(p).items()}


def fmt(x: float) -> str:
    return f"{x:g}"


# -- solving -------------------------------------------------------------------

def run_algo(algo: str, g: RoadGraph, origin: str, dest: str, params):
    """Returns (path, stats-row, extra columns)."""
    if algo == "dijkstra":
        path = dijkstra_shortest_path(g, origin, dest)
        return path, {"iterations": 1, "launched": 1, "completed": 1, "deposits": 0, "converged": 1}, {}
    if algo == "rfd":
        path, stats = rfd_solve(g, origin, dest, params)
        return path, stats.row(), {}
    if algo == "aco":
        path, stats = aco_solve(g, origin, dest, params)
        return path, stats.row(), {}
    path, stats = random_walk_solve(g, origin, dest, params)
    return path, stats.row(), {"coverage": stats.coverage}


def route_cmd(args) -> int:
    g = load_graph_arg(args.graph)
    g.require(args.origin, args.dest)
    overrides = parse_overrides(args.set)
    params = None
    if args.algo in PARAM_TYPES:
        check_overrides(overrides, {args.algo: PARAM_TYPES[args.algo]})
        params = build_params(PARAM_TYPES[args.algo], overrides, args.algo, args.seed)
    elif overrides:
        raise InputError("dijkstra takes no parameters")
    out_dir = Path(args.out_dir)
    write_stanza(out_dir, "route", {
        "graph": args.graph, "origin": args.origin, "dest": args.dest, "algo": args.algo,
        "seed": args.seed, "params": _params_dict(params) if params else {},
    })
    path, stats, extra = run_algo(args.algo, g, args.origin, args.dest, params)
    print(f"path: {','.join(path.nodes)}")
    print(f"cost: {fmt(path.total_cost)}")
    print("stats: " + " ".join(f"{k}={v}" for k, v in {**stats, **extra}.items()))
    row = {"algo": args.algo, "seed": args.seed, "path": ",".join(path.nodes), "cost": path.total_cost,
           **stats, "coverage": extra.get("coverage", "")}
    write_csv(out_dir / "route.csv", list(row), [row])
    return EXIT_OK


COMPARE_FIELDS = ["algo", "trial", "seed", "success", "path", "cost", "oracleCost", "gap", "iterations",
                  "converged", "cyclePressure", "coverage"]


def _parse_algo(token: str) -> tuple[str, dict]:
    """``walk:8x100`` selects walkers and steps; bare names use the defaults."""
    name, _, shape = token.partition(":")
    if name not in ALGOS:
        raise InputError(f"unknown algorithm {name!r}; choose from {', '.join(ALGOS)}")
    if shape:
        if name != "walk":
            raise InputError(f"only walk accepts a shape suffix, got {token!r}")
        try:
            walkers, steps = (int(x) for x in shape.split("x"))
        except ValueError as exc:
            raise InputError(f"expected walk:<walkers>x<steps>, got {token!r}") from exc
        return name, {"walkers": walkers, "max_steps": steps}
    return name, {}


def compare_cmd(args) -> int:
    algos = [a.strip() for a in (args.algos or "").split(",") if a.strip()]
    if not algos:
        raise InputError("--algos needs at least one algorithm")
    parsed = [(token, *_parse_algo(token)) for token in algos]
    g = load_graph_arg(args.graph)
    origin = args.origin or (g.backbone[0] if g.backbone else g.nodes[0])
    dest = args.dest or (g.backbone[-1] if g.backbone else g.nodes[-1])
    g.require(origin, dest)
    if args.trials < 1:
        raise InputError("--trials must be >= 1")
    seeds = parse_seeds(args.seeds, args.trials, 0)
    overrides = parse_overrides(args.set)
    check_overrides(overrides, PARAM_TYPES)
    oracle = dijkstra_shortest_path(g, origin, dest)
    rows = []
    for token, name, shape in parsed:
        for trial, seed in enumerate(seeds):
            params = None
            if name in PARAM_TYPES:
                params = build_params(PARAM_TYPES[name], overrides, name, seed)
                if shape:
                    params = dataclasses.replace(params, **shape)
            row = {"algo": token, "trial": trial, "seed": seed, "oracleCost": oracle.total_cost,
                   "cyclePressure": "", "coverage": ""}
            try:
                path, stats, extra = run_algo(name, g, origin, dest, params)
            except (NotConverged, NotFound) as exc:
                stats = exc.stats.row() if hasattr(exc.stats, "row") else {}
                row.update(success=0, path="", cost="", gap="", iterations=stats.get("iterations", ""),
                           converged=0)
                if name == "walk":
                    row["coverage"] = exc.stats.coverage
                rows.append(row)
                continue
            row.update(success=1, path=" ".join(path.nodes), cost=path.total_cost,
                       gap=path.total_cost - oracle.total_cost, iterations=stats["iterations"],
                       converged=stats["converged"], coverage=extra.get("coverage", ""))
            if name == "aco":
                row["cyclePressure"] = aco_cycle_pressure(g, origin, dest, params, walks=args.cycle_walks)
            elif name == "rfd":
                row["cyclePressure"] = float(has_repeat(path.nodes))
            rows.append(row)
    out_dir = Path(args.out_dir)
    write_csv(out_dir / "compare.csv", COMPARE_FIELDS, rows)
    write_stanza(out_dir, "compare", {
        "graph": args.graph, "origin": origin, "dest": dest, "algos": algos, "seeds": seeds,
        "cycleWalks": args.cycle_walks, "overrides": overrides,
        "params": {name: _params_dict(build_params(PARAM_TYPES[name], overrides, name, seeds[0]))
                   for _, name, _ in parsed if name in PARAM_TYPES},
    })
    for token, _, _ in parsed:
        mine = [r for r in rows if r["algo"] == token]
        ok = [r for r in mine if r["success"]]
        optimal = sum(1 for r in ok if abs(r["gap"]) <= 1e-9)
        print(f"{token}: success {len(ok)}/{len(mine)} optimal {optimal}/{len(mine)}")
    print(f"wrote {out_dir / 'compare.csv'}")
    return EXIT_OK


# -- simulation ----------------------------------------------------------------

SIM_KEYS = {f.name for f in dataclasses.fields(SimConfig)}


def simulate_cmd(args) -> int:
    net = read_network(args.network)
    cfg = load_scenario(args.scenario)
    changes = parse_overrides(args.set)
    unknown = set(changes) - SIM_KEYS
    if unknown:
        raise InputError(f"unknown scenario parameter(s): {sorted(unknown)}")
    if args.router:
        changes["router"] = args.router
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    cfg = dataclasses.replace(cfg, **changes)
    out_dir = Path(args.out_dir)
    write_stanza(out_dir, "simulate", {
        "network": args.network, "scenario": args.scenario, "seed": cfg.seed,
        "telemetryLog": args.telemetry_log, "windowMs": args.window_ms, "config": cfg.to_dict(),
    })
    metrics, tap, problems = simulate_with_telemetry(net, cfg, args.window_ms)
    (out_dir / "vehicles.csv").write_text(rows_to_csv(metrics.vehicles, VEHICLE_FIELDS), encoding="utf-8")
    (out_dir / "network.csv").write_text(rows_to_csv(metrics.network, NETWORK_FIELDS), encoding="utf-8")
    st = metrics.state
    print(f"router={cfg.router} seed={cfg.seed} spawned={st.spawned} arrived={st.arrived} "
          f"in_network={st.in_network} mean_travel_s={metrics.mean_travel_time():.3f} "
          f"router_failures={st.router_failures}")
    if args.telemetry_log:
        log_path = Path(args.telemetry_log)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_bytes(b"".join(tap.lines))
        if problems:
            for p in problems[:20]:
                print(f"telemetry mismatch: {p}", file=sys.stderr)
            return EXIT_INVARIANT
        print(f"telemetry: {len(tap.lines)} readings, pipeline matches ground truth")
    return EXIT_OK


def replay_cmd(args) -> int:
    net = read_network(args.network)
    if args.window_ms <= 0:
        raise InputError("--window-ms must be positive")
    with open(args.readings, "rb") as fh:
        cmap, counters = replay(fh, net, args.window_ms, args.jam_density)
    print("unitId,chi,stale")
    for uid, chi in cmap.chi.items():
        print(f"{uid},{chi!r},{int(uid in cmap.stale)}")
    print(f"asOfMs: {cmap.as_of_ms if cmap.as_of_ms is not None else ''}")
    print("counters: " + " ".join(f"{k}={v}" for k, v in counters.as_dict().items()))
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfdtraffic", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("route", help="solve one origin-destination query")
    p.add_argument("--graph", required=True, help="graph JSON file or random:n,m,seed")
    p.add_argument("--origin", required=True)
    p.add_argument("--dest", required=True)
    p.add_argument("--algo", choices=ALGOS, default="rfd")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=route_cmd)

    p = sub.add_parser("compare", help="repeated trials of several solvers against the exact oracle")
    p.add_argument("--graph", required=True, help="graph JSON file or random:n,m,seed")
    p.add_argument("--origin")
    p.add_argument("--dest")
    p.add_argument("--algos", required=True, help="comma list, e.g. rfd,aco,walk:8x100,dijkstra")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seeds", help="first seed, a..b range, or comma list")
    p.add_argument("--cycle-walks", type=int, default=1000)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=compare_cmd)

    p = sub.add_parser("simulate", help="run a traffic scenario")
    p.add_argument("--network", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--router", choices=("rfd", "aco", "dijkstra", "static"))
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--telemetry-log")
    p.add_argument("--window-ms", type=int, default=DEFAULT_WINDOW_MS)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=simulate_cmd)

    p = sub.add_parser("replay", help="rebuild the congestion map from a sensor log")
    p.add_argument("--network", required=True)
    p.add_argument("--readings", required=True)
    p.add_argument("--window-ms", type=int, default=DEFAULT_WINDOW_MS)
    p.add_argument("--jam-density", type=float, default=0.15)
    p.set_defaults(func=replay_cmd)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Unreachable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    except (NotConverged, NotFound) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_RESULT
    except (InputError, RfdTrafficError, OSError, ValueError) as exc:
        kind = "parse error" if isinstance(exc, ParseError) else "error"
        print(f"{kind}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
