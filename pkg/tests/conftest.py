"""Shared fixtures: small trained indicator models and example systems.

Training the unit-interval GMM is the only expensive fixture; it is
session-scoped and sized well below the production default so the unit
tests stay fast. Fit *quality* at the production size is covered by the
acceptance suite.
"""
from __future__ import annotations

import numpy as np
import pytest

from qgsf.harness import example1_config, example2_config
from qgsf.indicator import train_unit_gmm

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def record_acceptance(line: str) -> None:
    print(line)
    ACCEPTANCE_LINES.append(line)


@pytest.fixture(scope="session")
def unit_gmm_k5():
    return train_unit_gmm(20_000, 5, seed=20, max_iter=200)


@pytest.fixture(scope="session")
def unit_gmm_k20():
    # 1e5 samples / 200 iterations: seconds to train, adequate for filter
    # behaviour tests (density within a few percent of 1 on (0,1))
    return train_unit_gmm(100_000, 20, seed=20, max_iter=200)


@pytest.fixture(scope="session")
def ex1():
    return example1_config()


@pytest.fixture(scope="session")
def ex2():
    return example2_config()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
