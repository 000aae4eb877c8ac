import numpy as np
import pytest

from relocsim.core import ServiceNetwork, TimeGrid, TripRequest
from relocsim.ingest import TripLog


def uniform_network(N, travel=5, diagonal=1):
    T = np.full((N, N), travel)
    np.fill_diagonal(T, diagonal)
    return ServiceNetwork(zones=tuple(range(N)), travel_time=T)


def trip_log(rows, N=None):
    """``rows`` are (slot, origin, destination, duration[, willingness])."""
    requests = [TripRequest(*row) for row in rows]
    log = TripLog(requests, day="test")
    if N is not None:
        log.zone_ids = {z: z for z in range(N)}
    return log


@pytest.fixture
def grid():
    return TimeGrid(tau=1.0, n_C=15, n_R=30, n_O=45)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
