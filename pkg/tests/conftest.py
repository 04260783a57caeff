"""Shared fixtures: grids, cached ground states and the acceptance summary."""

import logging

import pytest

from mixedspike.spectral_core import GridSpec
from mixedspike.whole_space import ModelParams, compute_ground_state

logging.getLogger("mixedspike").setLevel(logging.WARNING)

ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def params():
    return ModelParams(dim=2, s=0.5, p=2.0, eps=0.1)


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec(2, 8.0, 64)


@pytest.fixture(scope="session")
def grid256():
    return GridSpec(2, 16.0, 256)


@pytest.fixture(scope="session")
def grid512():
    return GridSpec(2, 32.0, 512)


@pytest.fixture(scope="session")
def gs_small(params, small_grid):
    return compute_ground_state(params, small_grid, with_spectrum=True)


@pytest.fixture(scope="session")
def gs256(params, grid256):
    return compute_ground_state(params, grid256, with_spectrum=True)


@pytest.fixture(scope="session")
def gs512(params, grid512):
    return compute_ground_state(params, grid512, with_spectrum=True)


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Criterion number -> (passed, detail); printed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(ACCEPTANCE_KEY, None)
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(log):
        ok, detail = log[num]
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
