import sys

import numpy as np
import pytest

from eqwave.cw import reappearance_phi, solve_cw, default_seed
from eqwave.model import lang_kobayashi, stuart_landau
from eqwave.mw import mw_from_simulation, solve_mw

# standard-sign carrier relaxation; see README
LK_STABLE = {"alpha": 2.0, "eta": 0.1, "J": -0.5, "eps": -0.05}
MW_TAU, MW_PSI = 5.0, 3.1


@pytest.fixture(scope="session")
def lk():
    return lang_kobayashi(LK_STABLE)


@pytest.fixture(scope="session")
def sl():
    return stuart_landau()


@pytest.fixture(scope="session")
def lk_mw_run(lk):
    """Stable LK modulated wave at tau = 5 seeded by simulation."""
    cw = solve_cw(lk, MW_PSI, default_seed(lk, MW_PSI))
    model = lk.with_params(tau=MW_TAU, phi=reappearance_phi(cw, MW_TAU))
    guess, freqs = mw_from_simulation(model, cw, 6000.0, h=MW_TAU / 100)
    mw = solve_mw(model, guess)
    return model, mw, freqs


@pytest.fixture(scope="session")
def lk_mw(lk_mw_run):
    return lk_mw_run[0], lk_mw_run[1]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for i in sorted(results):
            terminalreporter.write_line(results[i])
