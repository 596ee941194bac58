import numpy as np
import pytest

from hjc import GrowthConstants, GrowthModel, InitialConstants, InitialData, QuadraticProblem

CANONICAL_BOX = [(-2.0, 3.0)]
BOX_2D = [(-2.0, 4.0), (-2.0, 4.0)]


def canonical(b=1.0):
    model = GrowthModel.quadratic(2.0, b, 1.0, constants=GrowthConstants(K0_bar=2.0))
    data = InitialData.quadratic(1.0, 1.0, peak=0.0,
                                 constants=InitialConstants(L0_under=2.0, L0_bar=2.0))
    return model, data


def instance_2d():
    model = GrowthModel.quadratic(np.diag([2.0, 8.0]), [2.0, 8.0], 1.0,
                                  constants=GrowthConstants(K0_bar=7.0, K1_bar=1.0, K1_under=4.0))
    data = InitialData.quadratic(np.eye(2), 1.0, peak=[0.0, 0.0],
                                 constants=InitialConstants(L0_under=7.0, L0_bar=7.0, L2=7.0))
    return model, data


def xbar_exact(t):
    return 0.5 * (1.0 - np.exp(-2.0 * np.asarray(t)))


def I_exact(t):
    return 1.0 + 0.25 * (1.0 - np.exp(-4.0 * np.asarray(t)))


@pytest.fixture(scope="session")
def canon():
    return canonical()


@pytest.fixture(scope="session")
def stationary():
    return canonical(b=0.0)


@pytest.fixture(scope="session")
def two_d():
    return instance_2d()


@pytest.fixture(scope="session")
def canon_problem():
    return QuadraticProblem(1.0, 2.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def problem_2d():
    return QuadraticProblem(np.eye(2), np.diag([2.0, 8.0]), [2.0, 8.0], 1.0)


ACCEPTANCE = []


def record(number, title, passed, detail):
    """Store one acceptance line; printed in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
