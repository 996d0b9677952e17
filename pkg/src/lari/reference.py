"""Slow, BVH-free reference renderers used to cross-check the fast paths."""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .geometry import DEFAULT_T_MIN, TriangleMesh, triangle_arrays
from .render import PinholeCamera


def first_hit_depth(mesh: TriangleMesh, camera: PinholeCamera, t_min: float = DEFAULT_T_MIN) -> np.ndarray:
    """Camera-space z of the nearest surface per pixel (NaN on miss).

    Tests every triangle for every pixel ray, no acceleration structure.
    """
    d_cam = camera.camera_directions().reshape(-1, 3)
    d_world = np.ascontiguousarray(d_cam @ camera.rotation.T)
    origins = np.ascontiguousarray(np.broadcast_to(camera.position, d_world.shape))
    v0, e1, e2, area2 = triangle_arrays(mesh)
    t = K.first_hit_depth(origins, d_world, t_min, v0, e1, e2, area2)
    z = np.where(np.isfinite(t), t * d_cam[:, 2], np.nan)
    return z.reshape(camera.height, camera.width)


def box_hit_interval(origin, directions, lo, hi):
    """Analytic slab intersection of rays with an axis-aligned box.

    Returns (t_near, t_far, hit) arrays for rays starting outside the box.
    """
    d = np.asarray(directions, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (np.asarray(lo) - origin) * inv
        t1 = (np.asarray(hi) - origin) * inv
    near = np.nanmax(np.minimum(t0, t1), axis=-1)
    far = np.nanmin(np.maximum(t0, t1), axis=-1)
    return near, far, (near < far) & (near > 0)
