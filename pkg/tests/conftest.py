import math

import numpy as np
import pytest

from refugia.geometry import DomainSpec, build_grid


@pytest.fixture(scope="session")
def ring():
    return build_grid(DomainSpec.ring(n=256))


@pytest.fixture(scope="session")
def ring64():
    return build_grid(DomainSpec.ring(n=64))


@pytest.fixture(scope="session")
def rect():
    return build_grid(DomainSpec.rect((128, 64)))


@pytest.fixture(scope="session")
def rect_small():
    return build_grid(DomainSpec.rect((64, 32)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def ring_x(grid):
    """Node positions on the ring as angles."""
    return grid.coords.reshape(grid.n, -1)[:, 0] * 2 * math.pi / grid.spec.circumference


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
