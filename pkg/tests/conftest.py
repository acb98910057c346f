import numpy as np
import pytest

from forestrisk.dynamics import StandState, ThinningSchedule, eucalyptus_model, simulate
from forestrisk.economics import EconomicParams, RiskParams, eucalyptus_price
from forestrisk.optimize import Problem

# The shipped cost calibration (see README); these constants have no reference values.
CAL_S0 = 1.5e-3
CAL_C1 = 2200.0
DELTA = 0.0034
LAMBDA = 0.0075
HBAR = 0.075


@pytest.fixture(scope="session")
def model():
    return eucalyptus_model()


@pytest.fixture(scope="session")
def price():
    return eucalyptus_price()


@pytest.fixture(scope="session")
def econ():
    return EconomicParams(DELTA, c1=CAL_C1, c2=300.0, cd=1.0)


@pytest.fixture(scope="session")
def risk():
    return RiskParams(LAMBDA, 0.6, 0.4)


@pytest.fixture(scope="session")
def problem(model, price, econ, risk):
    return Problem(model, price, econ, risk, n0=650.0, s0=CAL_S0)


@pytest.fixture(scope="session")
def bang_bang_traj(model):
    schedule = ThinningSchedule.bang_bang(36.5, 69.5, HBAR)
    return simulate(StandState(0.0, 650.0, CAL_S0), model, schedule)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(20240611))


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
