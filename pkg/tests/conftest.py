import numpy as np
import pytest

from dynatoll import load_bundled
from dynatoll.network import ArcSpec, FundamentalDiagram, TimeGrid, validate_network


# one line per acceptance criterion, echoed after the test summary so the
# verdicts survive output capture
ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_VERDICTS):
            terminalreporter.line(line)


@pytest.fixture(scope="session")
def case1():
    return load_bundled("case1")


@pytest.fixture(scope="session")
def case2():
    return load_bundled("case2")


@pytest.fixture
def table_arc():
    """Single 10-mile arc with the bundled-case diagram (capacity 3500)."""
    return ArcSpec(1, 1, 2, 10.0, 35.0, 400.0)


@pytest.fixture
def table_fd():
    return FundamentalDiagram(35.0, 400.0)


def tiny_network_cfg():
    """Two parallel single-arc paths between two nodes, one OD."""
    return {
        "arcs": [
            {"id": 1, "tail": 1, "head": 2, "length": 5.0,
             "free_speed": 35.0, "jam_density": 400.0},
            {"id": 2, "tail": 1, "head": 2, "length": 7.0,
             "free_speed": 35.0, "jam_density": 400.0},
        ],
        "paths": [
            {"id": "a", "arcs": [1], "od": "1-2"},
            {"id": "b", "arcs": [2], "od": "1-2"},
        ],
        "od": [{"id": "1-2", "origin": 1, "destination": 2, "demand": 100.0}],
    }


@pytest.fixture
def tiny_net():
    return validate_network(tiny_network_cfg())


@pytest.fixture
def tiny_grid():
    return TimeGrid(0.0, 2.0, 0.1)
