"""Sensor line protocol, windowed road agents and the central congestion server."""

from __future__ import annotations

import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Iterator, Optional

from .errors import MalformedRecord, UnknownUnit
from .sim import Metrics, Network, RoadUnit, SimConfig, SimState, congestion_index, run_scenario

log = logging.getLogger(__name__)

VERSION = "v1"
DEFAULT_WINDOW_MS = 5000
_UNIT_RE = re.compile(r"[!-+\--~]+>[!-+\--~]+")  # printable ASCII, no comma
_INT_RE = re.compile(r"[0-9]+")


@dataclass(frozen=True)
class SensorReading:
    unit_id: str
    timestamp_ms: int
    vehicle_count: int
    mean_speed_mps: float


@dataclass(frozen=True)
class AgentReport:
    agent_id: str
    unit_id: str
    window_start_ms: int
    window_end_ms: int
    mean_count: float
    readings_n: int


@dataclass
class Counters:
    parsed: int = 0
    malformed: int = 0
    stragglers: int = 0
    unknown_unit: int = 0

    def as_dict(self) -> dict:
        return {"parsed": self.parsed, "malformed": self.malformed,
                "stragglers": self.stragglers, "unknownUnit": self.unknown_unit}


@dataclass
class CongestionMap:
    chi: dict[str, float]
    stale: set[str]
    as_of_ms: Optional[int]


# -- codec ---------------------------------------------------------------------

def _check(r: SensorReading) -> None:
    if not isinstance(r.unit_id, str) or not _UNIT_RE.fullmatch(r.unit_id):
        raise MalformedRecord(f"bad unit id {r.unit_id!r}")
    for name in ("timestamp_ms", "vehicle_count"):
        v = getattr(r, name)
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise MalformedRecord(f"{name} must be a non-negative integer, got {v!r}")
    s = r.mean_speed_mps
    if isinstance(s, bool) or not isinstance(s, (int, float)) or not math.isfinite(s) or s < 0:
        raise MalformedRecord(f"mean speed must be finite and non-negative, got {s!r}")


def encode_reading(r: SensorReading) -> bytes:
    _check(r)
    speed = float(r.mean_speed_mps)
    return f"{VERSION},{r.unit_id},{r.timestamp_ms},{r.vehicle_count},{speed!r}\n".encode("ascii")


def decode_reading(line: bytes | str) -> SensorReading:
    if isinstance(line, (bytes, bytearray)):
        try:
            line = bytes(line).decode("ascii")
        except UnicodeDecodeError as exc:
            raise MalformedRecord("non-ASCII record") from exc
    line = line.rstrip("\r\n")
    parts = line.split(",")
    if len(parts) != 5:
        raise MalformedRecord(f"expected 5 fields, got {len(parts)}")
    version, unit, ts, count, speed = parts
    if version != VERSION:
        raise MalformedRecord(f"unknown version {version!r}")
    if not _INT_RE.fullmatch(ts) or not _INT_RE.fullmatch(count):
        raise MalformedRecord("timestamp and count must be non-negative integers")
    try:
        speed_v = float(speed)
    except ValueError as exc:
        raise MalformedRecord(f"speed {speed!r} is not a number") from exc
    r = SensorReading(unit, int(ts), int(count), speed_v)
    _check(r)
    return r


def parse_stream(lines: Iterable[bytes | str], counters: Counters) -> Iterator[SensorReading]:
    """Decode records, counting and skipping malformed ones."""
    for line in lines:
        if line in (b"", "", b"\n", "\n"):
            continue
        try:
            r = decode_reading(line)
        except MalformedRecord as exc:
            counters.malformed += 1
            log.debug("skipping record: %s", exc)
            continue
        counters.parsed += 1
        yield r


# -- road agents ---------------------------------------------------------------

class RoadAgent:
    """Aggregates readings into fixed windows of ``window_ms``.

    A window [s, s+W) closes once a reading with timestamp >= s + 2W has been
    seen, so arrivals up to one window late are still counted. Readings for
    an already closed window are stragglers.
    """

    def __init__(self, agent_id: str, window_ms: int = DEFAULT_WINDOW_MS, counters: Optional[Counters] = None):
        if window_ms <= 0:
            raise ValueError("window_ms must be positive")
        self.agent_id = agent_id
        self.window_ms = window_ms
        self.counters = counters if counters is not None else Counters()
        self.watermark = -1
        self._open: dict[tuple[int, str], list[int]] = {}
        self._closed_before = 0  # windows with index below this are closed

    def push(self, r: SensorReading) -> list[AgentReport]:
        w = r.timestamp_ms // self.window_ms
        if w < self._closed_before:
            self.counters.stragglers += 1
            return []
        acc = self._open.setdefault((w, r.unit_id), [0, 0])
        acc[0] += r.vehicle_count
        acc[1] += 1
        self.watermark = max(self.watermark, r.timestamp_ms)
        return self._close(self.watermark // self.window_ms - 1)

    def _close(self, below: int) -> list[AgentReport]:
        if below <= self._closed_before:
            return []
        self._closed_before = below
        ready = sorted(k for k in self._open if k[0] < below)
        return [self._report(k, self._open.pop(k)) for k in ready]

    def _report(self, key, acc) -> AgentReport:
        w, unit = key
        start = w * self.window_ms
        return AgentReport(self.agent_id, unit, start, start + self.window_ms, acc[0] / acc[1], acc[1])

    def flush(self) -> list[AgentReport]:
        ready = sorted(self._open)
        out = [self._report(k, self._open.pop(k)) for k in ready]
        if ready:
            self._closed_before = max(self._closed_before, ready[-1][0] + 1)
        return out


def agent_for(unit_id: str) -> str:
    """Agents sit at the crossing a unit flows into."""
    return unit_id.rsplit(">", 1)[-1]


def agent_aggregate(readings: Iterable[SensorReading], window_ms: int = DEFAULT_WINDOW_MS,
                    counters: Optional[Counters] = None) -> Iterator[AgentReport]:
    """Route readings to per-crossing agents and stream their window reports."""
    counters = counters if counters is not None else Counters()
    agents: dict[str, RoadAgent] = {}
    for r in readings:
        key = agent_for(r.unit_id)
        agent = agents.get(key)
        if agent is None:
            agent = agents[key] = RoadAgent(key, window_ms, counters)
        yield from agent.push(r)
    for key in sorted(agents):
        yield from agents[key].flush()


# -- central server ------------------------------------------------------------

def round_half_up(x: float) -> int:
    return int(Decimal(repr(x)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


class CongestionServer:
    """Keeps the latest window per unit and turns it into a congestion index."""

    def __init__(self, units: dict[str, RoadUnit], jam_density: float, counters: Optional[Counters] = None):
        self.units = units
        self.jam_density = jam_density
        self.counters = counters if counters is not None else Counters()
        self.latest: dict[str, AgentReport] = {}
        self.as_of_ms: Optional[int] = None

    def chi_of(self, report: AgentReport) -> float:
        unit = replace(self.units[report.unit_id], vehicle_count=round_half_up(report.mean_count))
        return congestion_index(unit, self.jam_density)

    def ingest(self, report: AgentReport) -> None:
        if report.unit_id not in self.units:
            self.counters.unknown_unit += 1
            log.debug("%s", UnknownUnit(f"report for unknown unit {report.unit_id!r}"))
            return
        prev = self.latest.get(report.unit_id)
        if prev is None or report.window_start_ms >= prev.window_start_ms:
            self.latest[report.unit_id] = report
        if self.as_of_ms is None or report.window_end_ms > self.as_of_ms:
            self.as_of_ms = report.window_end_ms

    def snapshot(self) -> CongestionMap:
        chi = {}
        stale = set()
        for uid in sorted(self.units):
            rep = self.latest.get(uid)
            if rep is None:
                chi[uid] = 0.0
                stale.add(uid)
            else:
                chi[uid] = self.chi_of(rep)
        return CongestionMap(chi, stale, self.as_of_ms)


def server_ingest(reports: Iterable[AgentReport], units: dict[str, RoadUnit], jam_density: float,
                  counters: Optional[Counters] = None) -> CongestionMap:
    server = CongestionServer(units, jam_density, counters)
    for rep in reports:
        server.ingest(rep)
    return server.snapshot()


def replay(lines: Iterable[bytes | str], net: Network, window_ms: int = DEFAULT_WINDOW_MS,
           jam_density: float = 0.15) -> tuple[CongestionMap, Counters]:
    counters = Counters()
    reports = agent_aggregate(parse_stream(lines, counters), window_ms, counters)
    return server_ingest(reports, net.units, jam_density, counters), counters


# -- simulator coupling --------------------------------------------------------

@dataclass
class SensorTap:
    """Simulation step hook: one reading per unit per step, plus exact per-window sums."""

    window_ms: int = DEFAULT_WINDOW_MS
    lines: list[bytes] = field(default_factory=list)
    truth: dict[tuple[str, int], list[int]] = field(default_factory=lambda: defaultdict(lambda: [0, 0]))

    def __call__(self, state: SimState, cfg: SimConfig) -> None:
        t_ms = int(round(state.time_s(cfg) * 1000))
        w = t_ms // self.window_ms
        for uid in sorted(state.units):
            unit = state.units[uid]
            speed = unit.length_m / state.tt[uid]
            self.lines.append(encode_reading(SensorReading(uid, t_ms, unit.vehicle_count, speed)))
            acc = self.truth[(uid, w)]
            acc[0] += unit.vehicle_count
            acc[1] += 1


def ground_truth_chi(tap: SensorTap, units: dict[str, RoadUnit], jam_density: float) -> dict[tuple[str, int], float]:
    """chi per (unit, window) computed straight from simulator counts.

    Lane changes from events are read from ``units`` (the final geometry),
    which is what the server sees as well.
    """
    out = {}
    for (uid, w), (total, n) in tap.truth.items():
        count = round_half_up(total / n)
        out[(uid, w)] = congestion_index(replace(units[uid], vehicle_count=count), jam_density)
    return out


def pipeline_mismatches(tap: SensorTap, units: dict[str, RoadUnit], jam_density: float) -> list[str]:
    """Replay the recorded stream and compare the server's map with ground truth at every window."""
    truth = ground_truth_chi(tap, units, jam_density)
    counters = Counters()
    server = CongestionServer(units, jam_density, counters)
    problems = []
    seen = set()
    for rep in agent_aggregate(parse_stream(tap.lines, counters), tap.window_ms, counters):
        server.ingest(rep)
        key = (rep.unit_id, rep.window_start_ms // tap.window_ms)
        seen.add(key)
        got = server.snapshot().chi[rep.unit_id]
        if got != truth.get(key):
            problems.append(f"{rep.unit_id} window {rep.window_start_ms}: pipeline {got} != truth {truth.get(key)}")
    missing = set(truth) - seen
    problems.extend(f"{u} window {w * tap.window_ms}: no report" for u, w in sorted(missing))
    if counters.malformed or counters.stragglers or counters.unknown_unit:
        problems.append(f"lossless stream produced drops: {counters.as_dict()}")
    return problems


def simulate_with_telemetry(net: Network, cfg: SimConfig, window_ms: int = DEFAULT_WINDOW_MS
                            ) -> tuple[Metrics, SensorTap, list[str]]:
    tap = SensorTap(window_ms)
    metrics = run_scenario(net, cfg, on_step=tap)
    return metrics, tap, pipeline_mismatches(tap, metrics.state.units, cfg.jam_density)
