"""Procedural closed meshes with outward winding (test scenes, demos)."""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh

_BOX_QUADS = [
    (0, 2, 3, 1),  # -x
    (4, 5, 7, 6),  # +x
    (0, 1, 5, 4),  # -y
    (2, 6, 7, 3),  # +y
    (0, 4, 6, 2),  # -z
    (1, 3, 7, 5),  # +z
]


def box(center=(0.0, 0.0, 0.0), size=1.0) -> TriangleMesh:
    """Axis-aligned box, 8 vertices / 12 triangles.

    Vertex ``i`` sits at the corner with bits (x, y, z) = (i>>2, i>>1, i) & 1.
    Every quad is split along its (first, third) corner diagonal.
    """
    c = np.asarray(center, dtype=np.float64)
    half = 0.5 * np.broadcast_to(np.asarray(size, dtype=np.float64), (3,))
    corners = np.array([[(i >> 2) & 1, (i >> 1) & 1, i & 1] for i in range(8)], dtype=np.float64)
    verts = c + (2.0 * corners - 1.0) * half
    tris = []
    for a, b, cc, d in _BOX_QUADS:
        tris.append((a, cc, b))
        tris.append((a, d, cc))
    return TriangleMesh(verts, np.array(tris))


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Geodesic sphere with 20 * 4**subdivisions triangles."""
    p = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0),
             (0, -1, p), (0, 1, p), (0, -1, -p), (0, 1, -p),
             (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.asarray(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.asarray(faces))


def torus(major: float = 1.0, minor: float = 0.35, n_major: int = 32, n_minor: int = 16,
          center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Torus around the y axis, 2 * n_major * n_minor triangles."""
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    a = 2 * np.pi * i / n_major
    b = 2 * np.pi * j / n_minor
    r = major + minor * np.cos(b)
    verts = np.stack([r * np.cos(a), minor * np.sin(b), r * np.sin(a)], axis=-1).reshape(-1, 3)

    def vid(ii, jj):
        return (ii % n_major) * n_minor + (jj % n_minor)

    tris = []
    for ii in range(n_major):
        for jj in range(n_minor):
            q00, q10 = vid(ii, jj), vid(ii + 1, jj)
            q01, q11 = vid(ii, jj + 1), vid(ii + 1, jj + 1)
            tris.append((q00, q01, q11))
            tris.append((q00, q11, q10))
    return TriangleMesh(verts + np.asarray(center, dtype=np.float64), np.asarray(tris))


def grid_sphere(n_lat: int, n_lon: int, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """UV sphere; used for large triangle counts (2 * n_lon * (n_lat - 1) triangles)."""
    lat = np.linspace(0, np.pi, n_lat + 1)[1:-1]
    lon = 2 * np.pi * np.arange(n_lon) / n_lon
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    ring = np.stack([np.sin(la) * np.cos(lo), np.cos(la), np.sin(la) * np.sin(lo)], -1).reshape(-1, 3)
    verts = np.concatenate([[[0, 1, 0]], ring, [[0, -1, 0]]]) * radius + np.asarray(center, dtype=np.float64)
    north, south = 0, len(verts) - 1

    def vid(r, c):
        return 1 + r * n_lon + (c % n_lon)

    tris = []
    for c in range(n_lon):
        tris.append((north, vid(0, c + 1), vid(0, c)))
        tris.append((south, vid(n_lat - 2, c), vid(n_lat - 2, c + 1)))
    for r in range(n_lat - 2):
        for c in range(n_lon):
            a, b = vid(r, c), vid(r, c + 1)
            cc, d = vid(r + 1, c), vid(r + 1, c + 1)
            tris.append((a, b, d))
            tris.append((a, d, cc))
    return TriangleMesh(verts, np.asarray(tris))
