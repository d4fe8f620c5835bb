import math

import numpy as np
import pytest

from eigentop import geometry


@pytest.fixture(scope="session")
def square_coarse():
    return geometry.build_mesh(geometry.square(), 0.35)


@pytest.fixture(scope="session")
def square_fine():
    return geometry.build_mesh(geometry.square(), math.pi / 16)


@pytest.fixture(scope="session")
def disk_coarse():
    return geometry.build_mesh(geometry.disk(), 0.08)


def mesh_max_edge(mesh):
    tri = mesh.vertices[mesh.triangles]
    e = tri - np.roll(tri, 1, axis=1)
    return np.hypot(e[..., 0], e[..., 1]).max()
