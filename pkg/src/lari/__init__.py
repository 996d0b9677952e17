"""Layered ray intersection (LaRI) ground truth rendering and evaluation."""

import os

# TBB shipped on many systems is too old for numba; OpenMP is always present
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from .errors import LariError  # noqa: E402
from .geometry import Bvh, Facing, Hit, Ray, TriangleMesh, build_bvh, dedupe_hits, ray_all_hits  # noqa: E402
from .render import (  # noqa: E402
    LariMap,
    PinholeCamera,
    generate_ray,
    index_from_logits,
    mask_from_index,
    render_lari,
    select_points,
)

__version__ = "0.1.0"

__all__ = [
    "Bvh", "Facing", "Hit", "LariError", "LariMap", "PinholeCamera", "Ray", "TriangleMesh",
    "build_bvh", "dedupe_hits", "generate_ray", "index_from_logits", "mask_from_index",
    "ray_all_hits", "render_lari", "select_points",
]
