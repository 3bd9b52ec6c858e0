import numpy as np
import pytest

from synthasr import nn


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    """Run the autodiff engine in double precision for the duration of a test."""
    with nn.precision(np.float64):
        yield


def pytest_terminal_summary(terminalreporter):
    from _acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(RESULTS):
            terminalreporter.write_line(line)
