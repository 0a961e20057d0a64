import numpy as np
import pytest

from eddytv.mesh import DomainSpec, build_box_mesh


@pytest.fixture(scope="session")
def tiny_spec():
    return DomainSpec((-2.0, 2.0), (-2.0, 2.0), (-2.0, 0.2), 0.0, (4, 4, 4), 0)


@pytest.fixture(scope="session")
def tiny_mesh(tiny_spec):
    return build_box_mesh(tiny_spec)


@pytest.fixture(scope="session")
def small_mesh():
    # enough interior structure for solver tests, still sub-second
    spec = DomainSpec((-2.0, 2.0), (-2.0, 2.0), (-2.0, 0.2), 0.0, (6, 6, 6), 0)
    return build_box_mesh(spec)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
