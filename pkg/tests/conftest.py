import re

import numpy as np
import pytest

from mineloc.env import ReferencePlacement, Scene, l_room, square_room

CORNERS = [[0.5, 0.5], [3.5, 0.5], [0.5, 3.5], [3.5, 3.5]]


@pytest.fixture(scope="session")
def square():
    return square_room()


@pytest.fixture(scope="session")
def lroom():
    return l_room()


@pytest.fixture(scope="session")
def corners(square):
    return ReferencePlacement.from_xy(CORNERS, square.ref_height, placement_id="corners")


@pytest.fixture(scope="session")
def corner_scene(square, corners):
    return Scene.build(square, corners)


@pytest.fixture
def strip_scene():
    """One anchor above the left end of a 2 m x 0.2 m corridor: ten cells on a line."""
    from mineloc.env import Room
    room = Room(np.array([[0, 0], [2.0, 0], [2.0, 0.2], [0, 0.2]]), name="strip")
    return Scene.build(room, ReferencePlacement.from_xy([[0.1, 0.1]], room.ref_height))


# Acceptance lines are collected here and echoed in the terminal summary so
# they appear in the log even when pytest captures stdout.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(re.search(r"criterion (\d+)", s).group(1))):
            terminalreporter.write_line(line)
