import numpy as np
import pytest

from spdelab.grid import make_grid
from spdelab.kernel import Boundary, OperatorSpec, build_generator, kernel_table


def make_table(T=1.0, D=1.0, nt=64, nx=32, boundary="dirichlet", a=1.0, b=0.0, **kw):
    grid = make_grid(T, D, nt, nx)
    op = OperatorSpec(a, b, Boundary(boundary), **kw)
    return kernel_table(build_generator(op, grid), grid, op)


@pytest.fixture(scope="session")
def dirichlet_64():
    return make_table(nt=64, nx=64)


@pytest.fixture(scope="session")
def coupling_table():
    # the sup-norm verification setting: T = 0.5, D = 1
    return make_table(T=0.5, nt=64, nx=32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
