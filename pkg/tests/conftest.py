from pathlib import Path

import pytest

from rfdtraffic.graph import graph_from_edges

DATA = Path(__file__).resolve().parent.parent / "data"

G1_EDGES = [("S", "M", 1), ("M", "D", 1), ("S", "D", 3)]
G2_EDGES = [("S", "T", 1), ("S", "M", 1), ("M", "D", 1), ("T", "S", 1)]
BACKEDGE_EDGES = G1_EDGES + [("M", "S", 1)]

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def g1():
    return graph_from_edges(G1_EDGES)


@pytest.fixture
def g2():
    return graph_from_edges(G2_EDGES)


@pytest.fixture
def backedge():
    return graph_from_edges(BACKEDGE_EDGES)


@pytest.fixture
def data_dir():
    return DATA


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
