import numpy as np
import pytest

from grid_attack.estimation import WeightModel
from grid_attack.network import dc_power_flow, load_case

LOCKED_14 = (
    [1, 2, 5, 6, 11, 12, 13]
    + [15, 16, 19, 21, 24, 25, 26, 27, 33]
    + [35, 36, 39, 41, 44, 45, 46, 47, 53]
)

_criteria = []


@pytest.fixture(scope="session")
def tri3():
    return load_case("tri3")


@pytest.fixture(scope="session")
def ieee14():
    return load_case("ieee14")


@pytest.fixture(scope="session")
def x14(ieee14):
    return dc_power_flow(ieee14)


@pytest.fixture
def uniform_weights():
    return lambda m: WeightModel.uniform(m)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(number, passed, detail)."""

    def record(number, passed, detail=""):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _criteria.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)
