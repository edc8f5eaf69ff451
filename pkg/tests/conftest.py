import numpy as np
import pytest

from nsmc.cli import reference_control
from nsmc.forward import SolverParams, solve_state
from nsmc.grid import Grid, GridSpec
from nsmc.objective import ProblemData

from helpers import OMEGA, SMALL_REF


@pytest.fixture(scope="session")
def grid():
    return Grid(GridSpec(12, 12, omega=OMEGA))


@pytest.fixture(scope="session")
def rect_grid():
    return Grid(GridSpec(10, 14, lx=1.0, ly=1.4, omega=(0.2, 0.8, 0.3, 1.1)))


@pytest.fixture(scope="session")
def params():
    return SolverParams(nu=0.05, T=0.3, nt=6)


@pytest.fixture(scope="session")
def problem(grid, params):
    """Tracking problem whose target is the state of a two-atom reference control."""
    ref = reference_control(SMALL_REF, params.nt, params.dt)
    yd = solve_state(grid, params, None, None, ref).full_arrays()
    return ProblemData.build(grid, params, yd=yd)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)



# ------------------------------------------------------------ acceptance lines
_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[name] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[name]
        num = int(name.split("_")[2])
        terminalreporter.write_line(f"criterion {num:2d}  {status}  {detail}")
