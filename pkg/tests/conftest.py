import numpy as np
import pytest

from fpsteer.control import SteerConfig, steer
from fpsteer.grid import Grid, project

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion."""
    table = request.config.stash[_ACCEPTANCE]

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        table[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(_ACCEPTANCE, {})
    if table:
        terminalreporter.section("acceptance criteria")
        for number in sorted(table):
            terminalreporter.write_line(table[number])


@pytest.fixture(scope="session")
def grid400():
    return Grid(400)


@pytest.fixture(scope="session")
def f_sine(grid400):
    return project("sine:0.5:1", grid400, normalized=True)


@pytest.fixture(scope="session")
def y0_step(grid400):
    return project("step:0.2:1.8:0.5", grid400, normalized=True)


@pytest.fixture(scope="session")
def standard_run(y0_step, f_sine):
    """Closed-loop steering of the step density to the sine target at T = 2."""
    return steer(y0_step, f_sine, 2.0, SteerConfig(epsilon=0.2, m_max=40))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
