import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rieszlab.geometry import LatticeSpec, build_connected_sum, build_lattice_box

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def path3():
    return build_lattice_box(1, 3)


@pytest.fixture(scope="session")
def path_long():
    return build_lattice_box(1, 41)


@pytest.fixture(scope="session")
def grid2():
    return build_lattice_box(2, 9)


@pytest.fixture(scope="session")
def cube9():
    return build_lattice_box(3, 9)


@pytest.fixture(scope="session")
def sum5():
    """R^3 # R^3 with side-5 ends and a 2-edge neck (251 vertices)."""
    return build_connected_sum(LatticeSpec(3, 5), LatticeSpec(3, 5), 2)


@pytest.fixture(scope="session")
def sum7():
    return build_connected_sum(LatticeSpec(3, 7), LatticeSpec(3, 7), 2)


@pytest.fixture(scope="session")
def sum9():
    return build_connected_sum(LatticeSpec(3, 9), LatticeSpec(3, 9), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def record_criterion():
    """Store one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(key, passed, detail):
        ACCEPTANCE_LINES[key] = f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[key])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.split()[0]), k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
