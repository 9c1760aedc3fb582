import numpy as np
import pytest

from celsim.dataset import synthetic_dataset
from celsim.timeseries import Profile, TimeAxis

ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def axis():
    return TimeAxis.for_year(2025)


@pytest.fixture(scope="session")
def dataset():
    return synthetic_dataset()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def constant(axis, value, unit="kW"):
    return Profile(axis, np.full(axis.n_steps, float(value)), unit)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
