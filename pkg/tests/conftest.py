import numpy as np
import pytest

from vartherm.fields import FieldMap
from vartherm.greens import calibrate
from vartherm.oracle import ChipStack
from vartherm.scenarios import standard_scenarios
from vartherm.variation import DEFAULT_BETA, fit_conductivity_coeff

ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture(scope="session")
def stack():
    return ChipStack()


@pytest.fixture(scope="session")
def small_stack():
    return ChipStack(n=16)


@pytest.fixture(scope="session")
def coeff():
    return fit_conductivity_coeff()


@pytest.fixture(scope="session")
def scenarios(stack):
    return standard_scenarios(stack)


@pytest.fixture(scope="session")
def calibrated(stack, scenarios, coeff):
    """Green's set for the default chip (floorplan scenario leakage) and its report."""
    return calibrate(stack, scenarios[0].leakage(DEFAULT_BETA), conductivity_coeff=coeff)


@pytest.fixture(scope="session")
def greens(calibrated):
    return calibrated[0]


def fmap(values, pitch=0.01 / 64, unit="W"):
    return FieldMap(np.asarray(values, dtype=float), pitch, unit)
