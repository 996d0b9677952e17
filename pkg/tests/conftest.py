import numpy as np
import pytest

from lari.geometry import TriangleMesh
from lari.shapes import box


def random_soup(rng, n_tri, spread=1.0):
    """Random triangles scattered in a cube of half-width ``spread``."""
    centers = rng.uniform(-spread, spread, (n_tri, 1, 3))
    verts = (centers + rng.normal(scale=0.2 * spread, size=(n_tri, 3, 3))).reshape(-1, 3)
    return TriangleMesh(verts, np.arange(3 * n_tri).reshape(-1, 3))


def random_rays(rng, n, radius=3.0):
    """Rays starting on a sphere around the origin and aimed near it."""
    o = rng.normal(size=(n, 3))
    o *= radius / np.linalg.norm(o, axis=1, keepdims=True)
    target = rng.uniform(-0.8, 0.8, (n, 3))
    d = target - o
    return o, d / np.linalg.norm(d, axis=1, keepdims=True)


def lumpy_shape():
    """Asymmetric union of boxes; no rotational self-symmetry."""
    return TriangleMesh.concatenate([
        box((0.0, 0.0, 0.0), 1.0),
        box((0.7, 0.2, 0.0), 0.4),
        box((0.0, 0.75, 0.3), 0.5),
        box((-0.2, -0.3, 0.8), 0.3),
    ])


def surface_samples(mesh, n, seed=0):
    """Area-weighted uniform samples on a mesh surface."""
    rng = np.random.default_rng(seed)
    tri = mesh.vertices[mesh.triangles]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    pick = rng.choice(len(tri), n, p=area / area.sum())
    u, v = rng.random((2, n))
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    t = tri[pick]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
