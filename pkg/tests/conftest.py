import os

import numpy as np
import pytest

from natgeo.gamma import gamma_sample
from natgeo.harness.checks import small_network

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def gamma_10k():
    return gamma_sample((20.0, 20.0), 10000, 7)


@pytest.fixture(scope="session")
def small_data():
    return gamma_sample((20.0, 20.0), 2000, 7)


@pytest.fixture(params=["squared", "bce", "mce"])
def tiny_net(request):
    return small_network(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
