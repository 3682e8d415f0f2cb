"""Shared fixtures: frames are expensive, so they are built once per session."""
from __future__ import annotations

import pytest

from cgcsurf.dalembert import GridSpec, extended_frame, maurer_cartan
from cgcsurf.loop_algebra import TruncationPolicy
from cgcsurf.potentials import builtin

# 33x33 on [0, 0.8]² gives h = 0.025, fine enough for 1% curvature medians
GRID = GridSpec((0.0, 0.8), (0.0, 0.8), 33, 33)
POLICY = TruncationPolicy(max_degree=24, tail_tolerance=1e-10)
# the revolution pair's own domain, at the spacing of GRID
DESK = GridSpec((0.0, 2.0), (0.0, 2.0), 81, 81)


@pytest.fixture(scope="session")
def revolution():
    return builtin("revolution")


@pytest.fixture(scope="session")
def amsler():
    return builtin("amsler")


@pytest.fixture(scope="session")
def revolution_frame(revolution):
    return extended_frame(revolution, GRID, POLICY)


@pytest.fixture(scope="session")
def revolution_mc(revolution_frame):
    return maurer_cartan(revolution_frame)


@pytest.fixture(scope="session")
def desk_frame(revolution):
    return extended_frame(revolution, DESK, POLICY)


@pytest.fixture(scope="session")
def amsler_frame(amsler):
    return extended_frame(amsler, GRID, POLICY)


@pytest.fixture(scope="session")
def amsler_mc(amsler_frame):
    return maurer_cartan(amsler_frame)
