"""River formation dynamics routing with ACO and random-walk baselines, a congestion simulator and a telemetry pipeline."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    InfeasibleCycle, InfeasibleParams, MalformedRecord, NoDescent, NotBlocked, NotConverged, NotFound,
    ParseError, RfdTrafficError, UnknownNode, UnknownUnit, Unreachable, ValidationError,
)
from .graph import (  # noqa: E402
    Edge, PathResult, RoadGraph, dijkstra_shortest_path, dump_graph, load_graph, random_graph, read_graph,
)
from .rfd import Landscape, RfdParams, SolveStats, solve  # noqa: E402
from .baselines import AcoParams, WalkParams, aco_cycle_pressure, aco_solve, random_walk_solve  # noqa: E402
