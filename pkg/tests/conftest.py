import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bohmguide import PAPER_PARAMS, Grid, build_potential, spec_from_delta

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def params():
    return PAPER_PARAMS


@pytest.fixture
def allowed(params):
    return spec_from_delta(params, 100e9)


@pytest.fixture
def forbidden(params):
    return spec_from_delta(params, -100e9)


@pytest.fixture
def small_grid():
    return Grid.from_spacing(-2e-5, 2e-5, 2e-7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def potential_on(params, grid):
    return build_potential(params, grid)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one verdict line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        print(line)
        request.config.stash[_ACCEPTANCE].append((number, line))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = sorted(config.stash.get(_ACCEPTANCE, []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
