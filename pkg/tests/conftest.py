import numpy as np
import pytest

import lyapcert as lc

BOX2 = [(-2.0, 2.0), (-2.0, 2.0)]


def field(*sources, n=2, names=None):
    return lc.VectorFieldDef(
        [lc.parse_expression(s, n, names) for s in sources])


@pytest.fixture(scope="session")
def circle_F():
    return lc.parse_expression("x^2 + y^2", 2)


@pytest.fixture(scope="session")
def circle_grid(circle_F):
    return lc.build_grid(circle_F, BOX2, 256)


@pytest.fixture(scope="session")
def circle_family(circle_F, circle_grid):
    return lc.build_nested_family(circle_F, (0.0, 0.0), circle_grid)


@pytest.fixture(scope="session")
def unit_circle(circle_F, circle_grid):
    comps = lc.extract_level_components(circle_grid, 1.0)
    assert len(comps) == 1
    H = lc.classify_closed(comps[0], circle_grid)
    return lc.orient_inward(H, (0.0, 0.0), circle_F)


@pytest.fixture(scope="session")
def damped_field():
    return field("y", "-x - y")


@pytest.fixture(scope="session")
def harmonic_field():
    return field("y", "-x")


@pytest.fixture(scope="session")
def source_field():
    return field("x", "y")


def vertex_nearest(H, point):
    d = np.linalg.norm(H.vertices - np.asarray(point, dtype=float)[None, :], axis=1)
    return int(np.argmin(d))
