import numpy as np
import pytest

from maflow.grid import DomainSpec, build_grid
from maflow.harness import exact_case
from maflow.solver import solve_flow


@pytest.fixture(scope="session")
def quad1():
    return exact_case("quad1")


@pytest.fixture(scope="session")
def quad1_grid(quad1):
    return quad1.grid()


@pytest.fixture(scope="session")
def quad1_exact(quad1, quad1_grid):
    return quad1.exact_field(quad1_grid)


@pytest.fixture(scope="session")
def quad1_solution(quad1, quad1_grid):
    return solve_flow(quad1.problem, quad1_grid)


@pytest.fixture(scope="session")
def disc_grid():
    """Coarse unit-disc grid for cheap slice-level tests."""
    return build_grid(DomainSpec("ball", 1, 1.0), 0.125, 0.1, 0.2)


@pytest.fixture(scope="session")
def ball2_grid():
    return build_grid(DomainSpec("ball", 2, 1.0), 0.25, 0.1, 0.1)


def sq(points):
    return np.sum(points**2, axis=-1)
