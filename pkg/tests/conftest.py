import numpy as np
import pytest

from levelopt.levelset import disk_level
from levelopt.mesh import generate_structured
from levelopt.sensitivity import ObservationSpec, select_I0
from levelopt.state import ProblemData

X0 = (0.25, 0.5)


def disk_problem(nx, form="vi", **kw):
    mesh = generate_structured(nx)
    G = disk_level(mesh, (0.5, 0.5), 0.25, pin=[X0])
    return ProblemData(mesh, G, -0.5, -100.0, form=form, **kw)


@pytest.fixture(scope="session")
def mesh10():
    return generate_structured(10)


@pytest.fixture(scope="session")
def problem30():
    return disk_problem(30)


@pytest.fixture(scope="session")
def obs_x0():
    return ObservationSpec([X0], 0.0)


@pytest.fixture(scope="session")
def I0_30(problem30, obs_x0):
    return select_I0(problem30.mesh, obs_x0, "ball", 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
