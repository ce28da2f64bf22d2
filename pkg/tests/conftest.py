import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from coherentfem import flows, mesh

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def zero_field(dim=2, periods=None):
    bounds = np.array([[0.0, 1.0]] * dim)
    return flows.VectorField("zero", dim, lambda t, x: np.zeros_like(x), bounds,
                             periods or (None,) * dim)


def linear_field(A):
    A = np.asarray(A, dtype=float)
    bounds = np.array([[-1.0, 1.0]] * A.shape[0])
    return flows.VectorField("linear", A.shape[0], lambda t, x: x @ A.T, bounds,
                             (None,) * A.shape[0])


@pytest.fixture
def zero2():
    return zero_field(2)


@pytest.fixture(scope="session")
def square25():
    return mesh.delaunay(mesh.regular_grid((25, 25), [[0, 1], [0, 1]]))


@pytest.fixture(scope="session")
def square50():
    return mesh.delaunay(mesh.regular_grid((50, 50), [[0, 1], [0, 1]]))


@pytest.fixture(scope="session")
def double_gyre():
    return flows.builtin_field("double_gyre")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
