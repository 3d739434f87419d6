"""Shared fixtures and the acceptance summary printed at the end of a run."""

from __future__ import annotations

import numpy as np
import pytest

from mffbsde.core import TimeGrid
from mffbsde.noise import make_tree

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"ACCEPTANCE {k}: {'PASS' if ok else 'FAIL'} {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def grid4():
    return TimeGrid(0.0, 1.0, 4)


@pytest.fixture(scope="session")
def tree4(grid4):
    return make_tree(grid4)


@pytest.fixture(scope="session")
def grid8():
    return TimeGrid(0.0, 1.0, 8)


@pytest.fixture(scope="session")
def tree8(grid8):
    return make_tree(grid8)
