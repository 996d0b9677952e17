"""Similarity registration: trimmed ICP and the brute-force rotation search
used for evaluation against canonical-frame ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCovariance, EmptyCloud
from .metrics import DEFAULT_THRESHOLDS, MetricsReport, cloud_metrics, sample_indices

COLLINEAR_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """x -> scale * rotation @ x + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self`` after ``other``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.scale * self.rotation @ other.translation + self.translation,
                              self.scale * other.scale)

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation) / self.scale, 1.0 / self.scale)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m


def rotation_angle(a: np.ndarray, b: np.ndarray | None = None) -> float:
    """Geodesic angle (radians) of ``a`` or of ``a @ b.T``."""
    r = a if b is None else a @ b.T
    # atan2 keeps precision near 0 where acos of the trace does not
    sin = 0.5 * math.hypot(r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1])
    return math.atan2(sin, 0.5 * (np.trace(r) - 1.0))


def axis_rotation(axis: str, degrees: float) -> np.ndarray:
    c, s = math.cos(math.radians(degrees)), math.sin(math.radians(degrees))
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    if axis == "z":
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    raise ValueError(axis)


def fit_similarity(src: np.ndarray, dst: np.ndarray, with_scale: bool = True) -> RigidTransform:
    """Closed-form least-squares similarity taking ``src`` onto ``dst`` (Umeyama)."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if len(sv) < 2 or sv[1] <= COLLINEAR_TOL * max(sv[0], 1e-300):
        raise DegenerateCovariance("correspondences are collinear")
    cov = xd.T @ xs / len(src)
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rot = (u * sign) @ vt
    scale = 1.0
    if with_scale:
        var_s = float(np.mean(np.sum(xs * xs, axis=1)))
        scale = float(np.sum(d * sign) / var_s)
    return RigidTransform(rot, mu_d - scale * rot @ mu_s, scale)


@dataclass
class IcpResult:
    transform: RigidTransform
    residual: float  # trimmed mean squared distance under ``transform``
    history: list[float]
    iterations: int
    converged: bool


def icp(src, dst, init: RigidTransform | None = None, *, overlap: float = 0.8,
        max_iter: int = 100, rel_tol: float = 1e-6, with_scale: bool = True,
        tree: cKDTree | None = None) -> IcpResult:
    """Trimmed ICP with a similarity update.

    Each round pairs every transformed source point with its nearest
    destination point, keeps the ``overlap`` fraction of pairs with the
    smallest distances and refits the transform on them. The trimmed mean
    squared distance cannot increase between rounds; the best transform seen
    is returned.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if len(src) < 3 or len(dst) < 3:
        raise EmptyCloud("ICP needs at least three points per cloud")
    if not 0 < overlap <= 1:
        raise ValueError("overlap must be in (0, 1]")
    tree = cKDTree(dst) if tree is None else tree
    keep = max(3, int(math.ceil(overlap * len(src))))
    cur = RigidTransform() if init is None else init
    best, best_err = cur, math.inf
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        moved = cur.apply(src)
        dist, idx = tree.query(moved, k=1, workers=-1)
        order = np.argsort(dist, kind="stable")[:keep]
        err = float(np.mean(dist[order] ** 2))
        history.append(err)
        if err < best_err:
            best, best_err = cur, err
        prev = history[-2] if len(history) > 1 else math.inf
        if err == 0.0 or (math.isfinite(prev) and (prev - err) <= rel_tol * prev):
            converged = True
            break
        step = fit_similarity(moved[order], dst[idx[order]], with_scale)
        cur = step.compose(cur)
    return IcpResult(best, best_err, history, it, converged)


def trimmed_icp(src, dst, init: RigidTransform | None = None, **params) -> RigidTransform:
    return icp(src, dst, init, **params).transform


def rotation_grid(n_azimuth: int = 24, n_elevation: int = 4) -> list[np.ndarray]:
    """Yaw (about y) x pitch (about x) initial rotations, both evenly spaced from 0."""
    out = []
    for j in range(n_elevation):
        pitch = axis_rotation("x", 360.0 * j / n_elevation)
        for i in range(n_azimuth):
            out.append(axis_rotation("y", 360.0 * i / n_azimuth) @ pitch)
    return out


def _initial_guess(rot, src, dst, with_scale) -> RigidTransform:
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    scale = 1.0
    if with_scale:
        rs = np.sqrt(np.mean(np.sum((src - cs) ** 2, axis=1)))
        rd = np.sqrt(np.mean(np.sum((dst - cd) ** 2, axis=1)))
        if rs > 0 and rd > 0:
            scale = float(rd / rs)
    return RigidTransform(rot, cd - scale * rot @ cs, scale)


def _chamfer_tree(moved, dst, tree) -> float:
    d_ab, _ = tree.query(moved, k=1)
    d_ba, _ = cKDTree(moved).query(dst, k=1)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def canonical_register(pred, gt, *, n_azimuth: int = 24, n_elevation: int = 4,
                       overlap: float = 0.8, max_iter: int = 100, rel_tol: float = 1e-6,
                       with_scale: bool = True, search_points: int = 1000, refine_top: int = 3,
                       search_iter: int = 30, seed: int = 0,
                       thresholds=DEFAULT_THRESHOLDS) -> tuple[RigidTransform, MetricsReport]:
    """Register ``pred`` onto ``gt`` by ICP from every rotation of a yaw x pitch grid.

    Every start is run on at most ``search_points`` points per cloud; the
    ``refine_top`` starts with the lowest Chamfer distance are re-run on the
    full clouds and the best of those is returned with its metrics. With
    clouds no larger than ``search_points`` this is an exhaustive search.
    """
    src = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(src) < 3 or len(dst) < 3:
        raise EmptyCloud("registration needs at least three points per cloud")
    small = len(src) <= search_points and len(dst) <= search_points
    if small:
        s_src, s_dst = src, dst
    else:
        s_src = src[sample_indices(len(src), min(search_points, len(src)), seed)]
        s_dst = dst[sample_indices(len(dst), min(search_points, len(dst)), seed + 1)]
    s_tree = cKDTree(s_dst)
    params = dict(overlap=overlap, rel_tol=rel_tol, with_scale=with_scale)

    scored = []
    failures = 0
    for k, rot in enumerate(rotation_grid(n_azimuth, n_elevation)):
        init = _initial_guess(rot, s_src, s_dst, with_scale)
        try:
            res = icp(s_src, s_dst, init, max_iter=max_iter if small else search_iter, tree=s_tree, **params)
        except DegenerateCovariance:
            failures += 1
            continue
        scored.append((_chamfer_tree(res.transform.apply(s_src), s_dst, s_tree), k, res.transform))
    if not scored:
        raise DegenerateCovariance(f"all {failures} initialisations failed")
    scored.sort(key=lambda x: (x[0], x[1]))

    if small:
        best = scored[0][2]
    else:
        tree = cKDTree(dst)
        finals = []
        for _, k, tf in scored[:refine_top]:
            try:
                res = icp(src, dst, tf, max_iter=max_iter, tree=tree, **params)
            except DegenerateCovariance:
                continue
            finals.append((_chamfer_tree(res.transform.apply(src), dst, tree), k, res.transform))
        finals.sort(key=lambda x: (x[0], x[1]))
        best = finals[0][2] if finals else scored[0][2]

    cd, fs = cloud_metrics(best.apply(src), dst, thresholds)
    report = MetricsReport(cd, fs, len(src), len(dst), "overall", None,
                           extra={"failed_inits": failures})
    return best, report
