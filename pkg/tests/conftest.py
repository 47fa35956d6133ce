import os
from pathlib import Path

import pytest

from scpricer.heston import HestonParams

CACHE = Path(os.environ.get("SCPRICER_CACHE", Path(__file__).resolve().parent.parent / ".cache"))

SET_BM = dict(r=0.05, kappa=3.0, gamma=0.1, rho=-0.1, v_bar=0.04, v0=0.04)
SET_I = dict(r=0.04, kappa=0.5, gamma=1.0, rho=-0.8, v_bar=0.08, v0=0.05)
SET_III = dict(r=0.01, kappa=0.46, gamma=0.99, rho=-0.79, v_bar=0.09, v0=0.11)


@pytest.fixture(scope="session")
def cache_dir():
    CACHE.mkdir(parents=True, exist_ok=True)
    return CACHE


@pytest.fixture
def set_bm():
    return HestonParams(**SET_BM, s0=100.0)


@pytest.fixture
def set_i():
    return HestonParams(**SET_I)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
