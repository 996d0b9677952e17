"""Triangle meshes, BVH construction and multi-hit ray queries."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import EmptyMesh

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12
DEFAULT_T_MIN = 1e-6
DEDUP_REL_EPS = 1e-6
LEAF_SIZE = 4
# bounding boxes are inflated by this fraction of the scene extent so the
# tolerant barycentric test never reports a hit outside its node
BOX_PAD_REL = 1e-7


class Facing(str, enum.Enum):
    FRONT = "front"
    BACK = "back"


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh.

    Degenerate triangles (area <= 1e-12) are removed on construction and
    counted in ``n_degenerate``. Triangle ids used everywhere else refer to
    the cleaned ``triangles`` array.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    n_degenerate: int = 0
    normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise IndexError(f"triangle index out of range for {len(verts)} vertices")
        dropped = self.n_degenerate
        if len(tris):
            p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
            cr = np.cross(p1 - p0, p2 - p0)
            area2 = np.linalg.norm(cr, axis=1)
            ok = 0.5 * area2 > DEGENERATE_AREA
            if not ok.all():
                dropped += int((~ok).sum())
                log.info("dropped %d degenerate triangles", int((~ok).sum()))
                tris = np.ascontiguousarray(tris[ok])
                cr, area2 = cr[ok], area2[ok]
            normals = cr / area2[:, None] if len(tris) else np.zeros((0, 3))
        else:
            normals = np.zeros((0, 3))
        verts.setflags(write=False)
        tris.setflags(write=False)
        normals.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "n_degenerate", dropped)
        object.__setattr__(self, "normals", normals)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        used = self.vertices[np.unique(self.triangles)] if self.n_triangles else self.vertices
        if len(used) == 0:
            return np.zeros(3), np.zeros(3)
        return used.min(axis=0), used.max(axis=0)

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """Center and radius of the sphere circumscribing the bounding box."""
        lo, hi = self.bounds()
        return 0.5 * (lo + hi), 0.5 * float(np.linalg.norm(hi - lo))

    def transformed(self, matrix: np.ndarray) -> TriangleMesh:
        m = np.asarray(matrix, dtype=np.float64)
        verts = self.vertices @ m[:3, :3].T + m[:3, 3]
        return TriangleMesh(verts, self.triangles)

    @staticmethod
    def concatenate(meshes) -> TriangleMesh:
        verts, tris, off = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + off)
            off += len(m.vertices)
        return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = DEFAULT_T_MIN
    t_max: float = np.inf

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not self.t_min < self.t_max:
            raise ValueError("t_min must be smaller than t_max")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def towards(cls, origin, direction, **kw) -> Ray:
        d = np.asarray(direction, dtype=np.float64)
        return cls(origin, d / np.linalg.norm(d), **kw)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    triangle_id: int
    facing: Facing


@dataclass(frozen=True, eq=False)
class Bvh:
    """Flattened BVH over a mesh.

    Node ``k`` has bounds ``node_min[k]``/``node_max[k]``; inner nodes have
    ``left``/``right`` >= 0, leaves cover ``perm[start[k]:start[k]+count[k]]``.
    Per-triangle edge data is cached for the kernels.
    """

    node_min: np.ndarray
    node_max: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    perm: np.ndarray
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    area2: np.ndarray
    scale: float

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)

    def kernel_args(self):
        return (self.node_min, self.node_max, self.left, self.right, self.start,
                self.count, self.perm, self.v0, self.e1, self.e2, self.area2)

    @property
    def dedup_epsilon(self) -> float:
        return DEDUP_REL_EPS * self.scale


def triangle_arrays(mesh: TriangleMesh):
    tri = mesh.triangles
    v0 = np.ascontiguousarray(mesh.vertices[tri[:, 0]])
    e1 = np.ascontiguousarray(mesh.vertices[tri[:, 1]] - v0)
    e2 = np.ascontiguousarray(mesh.vertices[tri[:, 2]] - v0)
    area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
    return v0, e1, e2, area2


def build_bvh(mesh: TriangleMesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    if mesh.n_triangles == 0:
        raise EmptyMesh("mesh has no valid triangles")
    v0, e1, e2, area2 = triangle_arrays(mesh)
    corners = mesh.vertices[mesh.triangles]
    lo, hi = corners.min(axis=1), corners.max(axis=1)
    extent = float(np.linalg.norm(hi.max(axis=0) - lo.min(axis=0)))
    pad = BOX_PAD_REL * max(extent, 1.0)
    cent = corners.mean(axis=1)
    nodes = K.build_nodes(lo - pad, hi + pad, cent, leaf_size)
    return Bvh(*nodes, v0, e1, e2, area2, scale=max(extent, 1.0))


def _as_rays(origins, directions, t_min, t_max):
    o = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    d = np.ascontiguousarray(np.atleast_2d(directions), dtype=np.float64)
    o = np.ascontiguousarray(np.broadcast_to(o, d.shape))
    n = len(d)
    tmin = np.ascontiguousarray(np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,)))
    tmax = np.ascontiguousarray(np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)))
    return o, d, tmin, tmax


def cast_rays(bvh: Bvh, origins, directions, t_min=DEFAULT_T_MIN, t_max=np.inf):
    """Raw (not deduplicated) hits for a batch of rays.

    Returns CSR arrays ``(offsets, t, triangle_id)``: hits of ray ``r`` are
    ``offsets[r]:offsets[r+1]``, sorted by t then triangle id.
    """
    o, d, tmin, tmax = _as_rays(origins, directions, t_min, t_max)
    args = bvh.kernel_args()
    counts = K.count_hits_batch(o, d, tmin, tmax, *args)
    offsets = np.zeros(len(d) + 1, np.int64)
    np.cumsum(counts, out=offsets[1:])
    out_t = np.empty(offsets[-1])
    out_id = np.empty(offsets[-1], np.int64)
    K.fill_hits_batch(o, d, tmin, tmax, offsets, *args, out_t, out_id)
    return offsets, out_t, out_id


def brute_force_hits(mesh: TriangleMesh, origins, directions, t_min=DEFAULT_T_MIN, t_max=np.inf):
    """Same contract as :func:`cast_rays`, testing every triangle for every ray."""
    o, d, tmin, tmax = _as_rays(origins, directions, t_min, t_max)
    v0, e1, e2, area2 = triangle_arrays(mesh)
    return K.brute_force_batch(o, d, tmin, tmax, v0, e1, e2, area2)


def dedupe_hits(hits: list[Hit], epsilon: float = 1e-6) -> list[Hit]:
    """Collapse runs of hits closer than ``epsilon`` to the run's first hit.

    Each hit is compared with the last hit kept, so the output is strictly
    increasing in t with gaps larger than ``epsilon``.
    """
    out: list[Hit] = []
    for h in hits:
        if out and h.t - out[-1].t <= epsilon:
            continue
        out.append(h)
    return out


def ray_all_hits(bvh: Bvh, mesh: TriangleMesh, ray: Ray, dedupe: bool = True,
                 epsilon: float | None = None) -> list[Hit]:
    """Every intersection of ``ray`` with ``mesh``, nearest first.

    Back-facing hits are included. With ``dedupe`` (default) hits closer than
    ``epsilon`` (default ``1e-6`` times the scene scale) are merged.
    """
    offsets, ts, ids = cast_rays(bvh, ray.origin, ray.direction, ray.t_min, ray.t_max)
    hits = []
    for t, tid in zip(ts.tolist(), ids.tolist()):
        facing = Facing.FRONT if float(ray.direction @ mesh.normals[tid]) < 0 else Facing.BACK
        hits.append(Hit(t, ray.at(t), tid, facing))
    if dedupe:
        hits = dedupe_hits(hits, bvh.dedup_epsilon if epsilon is None else epsilon)
    return hits
