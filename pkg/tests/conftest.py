import numpy as np
import pytest

from edacs.signals import build_impulse_response


@pytest.fixture(scope="session")
def canonical_h():
    return build_impulse_response(10.0, 1.0, 4.0, 40.0)


@pytest.fixture(scope="session")
def small_h():
    # same shape on a coarse grid: 20 samples
    return build_impulse_response(10.0, 1.0, 0.5, 40.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
