"""Pinhole cameras and layered intersection (LaRI) rendering.

Camera space is x right, y down, z forward. A LaRI map stores, per pixel,
the camera-space coordinates of the first ``L`` distinct ray/surface
intersections; the stopping index counts how many of those layers are valid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from ._parallel import worker_threads
from .errors import IndexOutOfRange, NonFiniteLogits, ShapeMismatch
from .geometry import DEFAULT_T_MIN, Bvh, Ray, TriangleMesh, build_bvh

DEFAULT_LAYERS = 5
DEFAULT_SIZE = 512


@dataclass(frozen=True, eq=False)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray = None  # 4x4 camera-to-world

    def __post_init__(self):
        pose = np.eye(4) if self.pose is None else np.array(self.pose, dtype=np.float64)
        if pose.shape == (3, 4):
            pose = np.vstack([pose, [0.0, 0.0, 0.0, 1.0]])
        if pose.shape != (4, 4):
            raise ValueError("pose must be a 4x4 (or 3x4) camera-to-world matrix")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        r = pose[:3, :3]
        if (np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9):
            raise ValueError("pose rotation must be orthonormal with det +1")
        pose.setflags(write=False)
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def from_fov(cls, width: int, height: int | None = None, fov_deg: float = 49.1, pose=None):
        """Square-pixel camera with the given vertical field of view."""
        height = width if height is None else height
        f = 0.5 * height / math.tan(math.radians(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height, pose)

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]

    def with_pose(self, pose) -> PinholeCamera:
        return PinholeCamera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)

    def scaled(self, factor: int) -> PinholeCamera:
        return PinholeCamera(self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor,
                             self.width * factor, self.height * factor, self.pose)

    def camera_directions(self) -> np.ndarray:
        """Unit camera-space ray directions, shape (H, W, 3)."""
        u = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        d = np.empty((self.height, self.width, 3))
        d[..., 0] = u[None, :]
        d[..., 1] = v[:, None]
        d[..., 2] = 1.0
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world pose at ``eye`` looking at ``target`` (``up`` is world up)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        # looking straight along up; any perpendicular works
        alt = np.array([0.0, 0.0, 1.0]) if abs(fwd[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(fwd, alt)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, down, fwd, eye
    return pose


def generate_ray(camera: PinholeCamera, u: int, v: int, t_min: float = DEFAULT_T_MIN) -> Ray:
    """World-space ray through the center of pixel (column ``u``, row ``v``)."""
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise IndexError(f"pixel ({u}, {v}) outside {camera.width}x{camera.height} image")
    d = np.array([(u + 0.5 - camera.cx) / camera.fx, (v + 0.5 - camera.cy) / camera.fy, 1.0])
    d /= np.linalg.norm(d)
    w = camera.rotation @ d
    return Ray(camera.position.copy(), w / np.linalg.norm(w), t_min=t_min)


@dataclass(eq=False)
class LariMap:
    """Layered camera-space intersections, ``points`` of shape (H, W, L, 3).

    Invalid entries hold ``fill`` (NaN); the stopping index is the source of
    truth for validity. ``hit_count`` (optional, H x W) is the number of
    distinct hits found per pixel before truncation to ``L``.
    """

    points: np.ndarray
    hit_count: np.ndarray | None = None
    fill: float = float("nan")

    @property
    def shape(self) -> tuple[int, int, int]:
        h, w, layers, _ = self.points.shape
        return h, w, layers

    @property
    def layers(self) -> int:
        return self.points.shape[2]

    @property
    def overflow_pixels(self) -> int:
        if self.hit_count is None:
            return 0
        return int((self.hit_count > self.layers).sum())

    @property
    def overflow_fraction(self) -> float:
        h, w, _ = self.shape
        return self.overflow_pixels / float(h * w)

    def scaled(self, factor: float) -> LariMap:
        return LariMap(self.points * factor, self.hit_count, self.fill)


def render_lari(mesh: TriangleMesh, bvh: Bvh | None, camera: PinholeCamera,
                layers: int = DEFAULT_LAYERS, workers: int | None = None,
                t_min: float = DEFAULT_T_MIN) -> tuple[LariMap, np.ndarray]:
    """Render the LaRI map and stopping index of ``mesh`` seen from ``camera``.

    Hits closer than the BVH dedup epsilon along a ray count once. Pixels
    with more than ``layers`` distinct hits are truncated; the untruncated
    count (saturating at the internal buffer size) is kept in
    ``LariMap.hit_count``. Output is independent of ``workers``.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if bvh is None:
        bvh = build_bvh(mesh)
    h, w = camera.height, camera.width
    pts = np.full((h, w, layers, 3), np.nan)
    index = np.zeros((h, w), np.int64)
    count = np.zeros((h, w), np.int64)
    cap = max(8 * (layers + 1), 64)
    rot = np.ascontiguousarray(camera.rotation)
    origin = np.ascontiguousarray(camera.position)
    with worker_threads(workers):
        K.render_layers(rot, origin, float(camera.fx), float(camera.fy), float(camera.cx),
                        float(camera.cy), h, w, layers, t_min, np.inf, bvh.dedup_epsilon, cap,
                        *bvh.kernel_args(), pts, index, count)
    return LariMap(pts, count), index


def mask_from_index(index: np.ndarray, layers: int) -> np.ndarray:
    """Boolean (H, W, L) mask whose layer ``l`` is set iff ``l + 1 <= C``."""
    c = np.asarray(index)
    if c.size and (c.max() > layers or c.min() < 0):
        raise IndexOutOfRange(f"stopping index outside 0..{layers}")
    return np.arange(1, layers + 1) <= c[..., None]


def index_from_mask(mask: np.ndarray) -> np.ndarray:
    """Length of the valid prefix per pixel (inverse of :func:`mask_from_index`)."""
    m = np.asarray(mask, dtype=bool)
    return np.cumprod(m, axis=-1).sum(axis=-1)


def select_points(lari, mask: np.ndarray, return_layers: bool = False):
    """Points where ``mask`` is set, in row-major (h, w, l) order."""
    pts = lari.points if isinstance(lari, LariMap) else np.asarray(lari)
    mask = np.asarray(mask, dtype=bool)
    if pts.shape[:-1] != mask.shape or pts.shape[-1] != 3:
        raise ShapeMismatch(f"map {pts.shape} does not match mask {mask.shape}")
    out = pts[mask]
    if return_layers:
        return out, np.nonzero(mask)[-1]
    return out


def index_from_logits(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the L+1 stopping logits; ties go to the smaller index."""
    s = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(s).all():
        raise NonFiniteLogits("stopping logits contain NaN or inf")
    return np.argmax(s, axis=-1)
