from __future__ import annotations

import logging

import numpy as np
import pytest

from fortify.dataset import ObservedData
from fortify.simulation import Section4Dgp, generate_section4


@pytest.fixture(autouse=True)
def _quiet_solver_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="fortify")


@pytest.fixture(scope="session")
def sec4_small():
    """One moderate sample of the continuous design (n = 3000)."""
    return generate_section4(Section4Dgp(3000, seed=4))[0]


@pytest.fixture(scope="session")
def sec4_large():
    return generate_section4(Section4Dgp(50000, seed=3))


def tiny_data(n=40, k=2, d_w=1, p=1, seed=0):
    rng = np.random.default_rng(seed)
    a = np.zeros(n)
    a[: n // 2] = 1.0
    rng.shuffle(a)
    return ObservedData(
        y=rng.normal(size=n), a=a, z=rng.normal(size=(n, k)), w=rng.normal(size=(n, d_w)),
        x=rng.normal(size=(n, p)),
    )


@pytest.fixture
def tiny():
    return tiny_data()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
