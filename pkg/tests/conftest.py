from __future__ import annotations

import sys

import numpy as np
import pytest

from evs.systems import make_system


ALL_SYSTEMS = ("burgers", "euler", "mhd", "compressible")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def system(name: str, **kwargs):
    return make_system(name, **kwargs)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
