"""Numba kernels: triangle test, BVH build/traversal, layered rendering.

Everything here works on flat float64/int64 arrays so the same code path is
used by single-ray queries, batched queries and the image renderer.
"""

from __future__ import annotations

import numba as nb
import numpy as np

BARY_EPS = 1e-9
# |det| below this fraction of the doubled triangle area counts as a grazing miss
GRAZING_EPS = 1e-12
INV_BIG = 1e300
NO_HIT = -1.0


@nb.njit(cache=True, inline="always")
def intersect(ox, oy, oz, dx, dy, dz, v0, e1, e2, area2, i, t_min, t_max):
    """Tolerant Moller-Trumbore test of ray against triangle ``i``.

    Returns the ray parameter or ``NO_HIT``.
    """
    e1x = e1[i, 0]
    e1y = e1[i, 1]
    e1z = e1[i, 2]
    e2x = e2[i, 0]
    e2y = e2[i, 1]
    e2z = e2[i, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) <= GRAZING_EPS * area2[i]:
        return NO_HIT
    inv = 1.0 / det
    sx = ox - v0[i, 0]
    sy = oy - v0[i, 1]
    sz = oz - v0[i, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
        return NO_HIT
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
        return NO_HIT
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t < t_min or t > t_max:
        return NO_HIT
    return t


@nb.njit(cache=True, inline="always")
def _inv(d):
    if d == 0.0:
        return INV_BIG
    return 1.0 / d


@nb.njit(cache=True, inline="always")
def box_hit(ox, oy, oz, ix, iy, iz, bmin, bmax, k, t_lo, t_hi):
    """Slab test; returns entry parameter or -inf on miss."""
    a = (bmin[k, 0] - ox) * ix
    b = (bmax[k, 0] - ox) * ix
    if a > b:
        a, b = b, a
    lo = max(t_lo, a)
    hi = min(t_hi, b)
    a = (bmin[k, 1] - oy) * iy
    b = (bmax[k, 1] - oy) * iy
    if a > b:
        a, b = b, a
    lo = max(lo, a)
    hi = min(hi, b)
    a = (bmin[k, 2] - oz) * iz
    b = (bmax[k, 2] - oz) * iz
    if a > b:
        a, b = b, a
    lo = max(lo, a)
    hi = min(hi, b)
    if lo <= hi:
        return lo
    return -np.inf


# ---------------------------------------------------------------- BVH build


@nb.njit(cache=True)
def build_nodes(tri_min, tri_max, cent, leaf_size):
    n = cent.shape[0]
    cap = 2 * n + 1
    node_min = np.empty((cap, 3))
    node_max = np.empty((cap, 3))
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    perm = np.arange(n)

    stack_node = np.empty(cap, np.int64)
    stack_lo = np.empty(cap, np.int64)
    stack_hi = np.empty(cap, np.int64)
    sp = 0
    n_nodes = 1
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for a in range(3):
            node_min[node, a] = np.inf
            node_max[node, a] = -np.inf
        for j in range(lo, hi):
            tri = perm[j]
            for a in range(3):
                if tri_min[tri, a] < node_min[node, a]:
                    node_min[node, a] = tri_min[tri, a]
                if tri_max[tri, a] > node_max[node, a]:
                    node_max[node, a] = tri_max[tri, a]
                if cent[tri, a] < cmin[a]:
                    cmin[a] = cent[tri, a]
                if cent[tri, a] > cmax[a]:
                    cmax[a] = cent[tri, a]
        axis = 0
        ext = cmax[0] - cmin[0]
        for a in range(1, 3):
            if cmax[a] - cmin[a] > ext:
                ext = cmax[a] - cmin[a]
                axis = a
        if hi - lo <= leaf_size or ext <= 0.0:
            start[node] = lo
            count[node] = hi - lo
            continue
        sub = perm[lo:hi].copy()
        keys = np.empty(hi - lo)
        for j in range(hi - lo):
            keys[j] = cent[sub[j], axis]
        order = np.argsort(keys, kind="mergesort")
        for j in range(hi - lo):
            perm[lo + j] = sub[order[j]]
        mid = lo + (hi - lo) // 2
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        # right pushed first so the left subtree is numbered first
        stack_node[sp] = rc
        stack_lo[sp] = mid
        stack_hi[sp] = hi
        sp += 1
        stack_node[sp] = lc
        stack_lo[sp] = lo
        stack_hi[sp] = mid
        sp += 1
    return (node_min[:n_nodes].copy(), node_max[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), start[:n_nodes].copy(), count[:n_nodes].copy(), perm)


# ---------------------------------------------------------------- traversal


@nb.njit(cache=True, inline="always")
def _less(ta, ia, tb, ib):
    return ta < tb or (ta == tb and ia < ib)


@nb.njit(cache=True, inline="always")
def _insert(buf_t, buf_id, n, cap, t, tid):
    """Insert (t, tid) into the sorted prefix buf[:n]; keeps at most ``cap``.

    Returns the new length.
    """
    if n == cap:
        if not _less(t, tid, buf_t[n - 1], buf_id[n - 1]):
            return n
        n -= 1
    j = n
    while j > 0 and _less(t, tid, buf_t[j - 1], buf_id[j - 1]):
        buf_t[j] = buf_t[j - 1]
        buf_id[j] = buf_id[j - 1]
        j -= 1
    buf_t[j] = t
    buf_id[j] = tid
    return n + 1


@nb.njit(cache=True)
def collect_hits(ox, oy, oz, dx, dy, dz, t_min, t_max,
                 node_min, node_max, left, right, start, count, perm,
                 v0, e1, e2, area2, buf_t, buf_id, cap, stack):
    """All raw hits along one ray through the BVH.

    The smallest ``cap`` hits (ordered by t, then triangle id) land in the
    buffers; the return value is (stored, total). Once the buffer is full,
    subtrees beyond the current largest stored t are pruned, so ``total`` is
    only exact while ``total <= cap``.
    """
    ix = _inv(dx)
    iy = _inv(dy)
    iz = _inv(dz)
    n = 0
    total = 0
    sp = 0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        k = stack[sp]
        limit = t_max
        if cap > 0 and n == cap:
            limit = buf_t[n - 1]
        if box_hit(ox, oy, oz, ix, iy, iz, node_min, node_max, k, t_min, limit) == -np.inf:
            continue
        if left[k] < 0:
            for j in range(start[k], start[k] + count[k]):
                tri = perm[j]
                t = intersect(ox, oy, oz, dx, dy, dz, v0, e1, e2, area2, tri, t_min, t_max)
                if t == NO_HIT:
                    continue
                total += 1
                if cap > 0:
                    n = _insert(buf_t, buf_id, n, cap, t, tri)
            continue
        lc = left[k]
        rc = right[k]
        tl = box_hit(ox, oy, oz, ix, iy, iz, node_min, node_max, lc, t_min, t_max)
        tr = box_hit(ox, oy, oz, ix, iy, iz, node_min, node_max, rc, t_min, t_max)
        # nearer child on top of the stack
        if tl <= tr:
            if tr != -np.inf:
                stack[sp] = rc
                sp += 1
            if tl != -np.inf:
                stack[sp] = lc
                sp += 1
        else:
            if tl != -np.inf:
                stack[sp] = lc
                sp += 1
            if tr != -np.inf:
                stack[sp] = rc
                sp += 1
    return n, total


@nb.njit(cache=True)
def dedupe_sorted(buf_t, n, eps):
    """Indices kept by collapsing hits within ``eps`` of the last kept one."""
    keep = np.empty(n, np.int64)
    m = 0
    last = -np.inf
    for j in range(n):
        if m == 0 or buf_t[j] - last > eps:
            keep[m] = j
            m += 1
            last = buf_t[j]
    return keep[:m]


@nb.njit(parallel=True, cache=True)
def count_hits_batch(origins, dirs, t_min, t_max,
                     node_min, node_max, left, right, start, count, perm,
                     v0, e1, e2, area2):
    n_rays = origins.shape[0]
    out = np.zeros(n_rays, np.int64)
    depth = node_min.shape[0] + 1
    dummy_t = np.empty(0)
    dummy_i = np.empty(0, np.int64)
    for r in nb.prange(n_rays):
        stack = np.empty(depth, np.int64)
        _, tot = collect_hits(origins[r, 0], origins[r, 1], origins[r, 2],
                              dirs[r, 0], dirs[r, 1], dirs[r, 2], t_min[r], t_max[r],
                              node_min, node_max, left, right, start, count, perm,
                              v0, e1, e2, area2, dummy_t, dummy_i, 0, stack)
        out[r] = tot
    return out


@nb.njit(parallel=True, cache=True)
def fill_hits_batch(origins, dirs, t_min, t_max, offsets,
                    node_min, node_max, left, right, start, count, perm,
                    v0, e1, e2, area2, out_t, out_id):
    n_rays = origins.shape[0]
    depth = node_min.shape[0] + 1
    for r in nb.prange(n_rays):
        stack = np.empty(depth, np.int64)
        lo = offsets[r]
        hi = offsets[r + 1]
        collect_hits(origins[r, 0], origins[r, 1], origins[r, 2],
                     dirs[r, 0], dirs[r, 1], dirs[r, 2], t_min[r], t_max[r],
                     node_min, node_max, left, right, start, count, perm,
                     v0, e1, e2, area2, out_t[lo:hi], out_id[lo:hi], hi - lo, stack)


@nb.njit(parallel=True, cache=True)
def brute_force_batch(origins, dirs, t_min, t_max, v0, e1, e2, area2):
    """Every triangle against every ray; returns CSR (offsets, t, ids) sorted per ray."""
    n_rays = origins.shape[0]
    n_tri = v0.shape[0]
    counts = np.zeros(n_rays, np.int64)
    for r in nb.prange(n_rays):
        c = 0
        for i in range(n_tri):
            t = intersect(origins[r, 0], origins[r, 1], origins[r, 2],
                          dirs[r, 0], dirs[r, 1], dirs[r, 2], v0, e1, e2, area2, i, t_min[r], t_max[r])
            if t != NO_HIT:
                c += 1
        counts[r] = c
    offsets = np.zeros(n_rays + 1, np.int64)
    for r in range(n_rays):
        offsets[r + 1] = offsets[r] + counts[r]
    out_t = np.empty(offsets[n_rays])
    out_id = np.empty(offsets[n_rays], np.int64)
    for r in nb.prange(n_rays):
        n = 0
        lo = offsets[r]
        seg_t = out_t[lo:offsets[r + 1]]
        seg_i = out_id[lo:offsets[r + 1]]
        for i in range(n_tri):
            t = intersect(origins[r, 0], origins[r, 1], origins[r, 2],
                          dirs[r, 0], dirs[r, 1], dirs[r, 2], v0, e1, e2, area2, i, t_min[r], t_max[r])
            if t != NO_HIT:
                n = _insert(seg_t, seg_i, n, counts[r], t, i)
    return offsets, out_t, out_id


# ---------------------------------------------------------------- rendering


@nb.njit(parallel=True, cache=True)
def render_layers(rot, origin, fx, fy, cx, cy, height, width, n_layers,
                  t_min, t_max, eps, cap,
                  node_min, node_max, left, right, start, count, perm,
                  v0, e1, e2, area2, out_pts, out_index, out_count):
    """Layered render; each row is an independent work item."""
    depth = node_min.shape[0] + 1
    ox = origin[0]
    oy = origin[1]
    oz = origin[2]
    for v in nb.prange(height):
        buf_t = np.empty(cap)
        buf_id = np.empty(cap, np.int64)
        stack = np.empty(depth, np.int64)
        for u in range(width):
            cx_ = (u + 0.5 - cx) / fx
            cy_ = (v + 0.5 - cy) / fy
            norm = np.sqrt(cx_ * cx_ + cy_ * cy_ + 1.0)
            ax = cx_ / norm
            ay = cy_ / norm
            az = 1.0 / norm
            dx = rot[0, 0] * ax + rot[0, 1] * ay + rot[0, 2] * az
            dy = rot[1, 0] * ax + rot[1, 1] * ay + rot[1, 2] * az
            dz = rot[2, 0] * ax + rot[2, 1] * ay + rot[2, 2] * az
            n, _ = collect_hits(ox, oy, oz, dx, dy, dz, t_min, t_max,
                                node_min, node_max, left, right, start, count, perm,
                                v0, e1, e2, area2, buf_t, buf_id, cap, stack)
            kept = 0
            last = -np.inf
            for j in range(n):
                t = buf_t[j]
                if kept > 0 and t - last <= eps:
                    continue
                if kept < n_layers:
                    out_pts[v, u, kept, 0] = t * ax
                    out_pts[v, u, kept, 1] = t * ay
                    out_pts[v, u, kept, 2] = t * az
                kept += 1
                last = t
            out_index[v, u] = min(kept, n_layers)
            out_count[v, u] = kept


@nb.njit(parallel=True, cache=True)
def first_hit_depth(origins, dirs, t_min, v0, e1, e2, area2):
    """Nearest hit per ray by exhaustive search; inf where nothing is hit."""
    n_rays = origins.shape[0]
    out = np.full(n_rays, np.inf)
    for r in nb.prange(n_rays):
        best = np.inf
        for i in range(v0.shape[0]):
            t = intersect(origins[r, 0], origins[r, 1], origins[r, 2],
                          dirs[r, 0], dirs[r, 1], dirs[r, 2], v0, e1, e2, area2, i, t_min, np.inf)
            if t != NO_HIT and t < best:
                best = t
        out[r] = best
    return out
