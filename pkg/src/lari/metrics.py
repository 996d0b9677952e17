"""Scale-shift alignment, training losses and point-cloud / mask metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateSystem, EmptyCloud, EmptyRegion, IndexOutOfRange, NonFiniteLogits, ShapeMismatch
from .render import LariMap, mask_from_index

DEFAULT_THRESHOLDS = (0.1, 0.05, 0.02)
OBJECT_SAMPLES = 10_000
SCENE_SAMPLES = 100_000
REGIONS = ("visible", "unseen", "overall")
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class AlignmentResult:
    s: float
    t: float
    residual_rms: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        out = self.s * np.asarray(points, dtype=np.float64)
        out[..., 2] += self.t
        return out


def _points(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a.reshape(-1, 3)


def scale_shift_align(pred, gt) -> AlignmentResult:
    """Least-squares scale ``s`` (all axes) and z-shift ``t`` mapping pred onto gt.

    Points correspond index-wise. Solves the 2x2 normal equations of
    ``sum |s * p + t * z_hat - g|^2``.
    """
    p, g = _points(pred), _points(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"{len(p)} predicted vs {len(g)} reference points")
    n = len(p)
    if n < 2:
        raise DegenerateSystem("need at least two correspondences")
    szz = float(np.sum(p * p))
    sz = float(p[:, 2].sum())
    a = np.array([[szz, sz], [sz, float(n)]])
    b = np.array([float(np.sum(p * g)), float(g[:, 2].sum())])
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise DegenerateSystem(f"normal equations are singular (condition {cond:.3g})")
    s, t = np.linalg.solve(a, b)
    r = s * p - g
    r[:, 2] += t
    return AlignmentResult(float(s), float(t), float(np.sqrt(np.mean(np.sum(r * r, axis=1)))))


def _lari_points(x) -> np.ndarray:
    return x.points if isinstance(x, LariMap) else np.asarray(x, dtype=np.float64)


def lari_loss(pred, gt, mask) -> float:
    """Mean Euclidean distance between aligned prediction and ground truth over ``mask``."""
    p, g = _lari_points(pred), _lari_points(gt)
    mask = np.asarray(mask, dtype=bool)
    if p.shape != g.shape or p.shape[:-1] != mask.shape:
        raise ShapeMismatch(f"pred {p.shape}, gt {g.shape}, mask {mask.shape}")
    ps, gs = p[mask], g[mask]
    al = scale_shift_align(ps, gs)
    return float(np.linalg.norm(al.apply(ps) - gs, axis=1).mean())


def cross_entropy_index_loss(logits, index) -> float:
    """Mean negative log-softmax of the true stopping index over all pixels."""
    s = np.asarray(logits, dtype=np.float64)
    c = np.asarray(index)
    if s.shape[:-1] != c.shape:
        raise ShapeMismatch(f"logits {s.shape} vs index {c.shape}")
    if not np.isfinite(s).all():
        raise NonFiniteLogits("stopping logits contain NaN or inf")
    n_cls = s.shape[-1]
    if c.size and (c.min() < 0 or c.max() >= n_cls):
        raise IndexOutOfRange(f"index outside 0..{n_cls - 1}")
    m = s.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(s - m).sum(axis=-1))
    true = np.take_along_axis(s, c[..., None].astype(np.int64), axis=-1)[..., 0]
    return float(np.mean(lse - true))


# ------------------------------------------------------------------ clouds


def _cloud(x, name: str) -> np.ndarray:
    a = _points(x)
    if len(a) == 0:
        raise EmptyCloud(f"{name} point cloud is empty")
    return a


def nearest_distances(query, ref, tree: cKDTree | None = None) -> np.ndarray:
    """Distance from each point of ``query`` to its nearest neighbour in ``ref``."""
    tree = cKDTree(ref) if tree is None else tree
    d, _ = tree.query(query, k=1)
    return d


def chamfer(a, b) -> float:
    """Half the sum of mean nearest-neighbour distances a->b and b->a (not squared)."""
    a, b = _cloud(a, "first"), _cloud(b, "second")
    return 0.5 * (float(nearest_distances(a, b).mean()) + float(nearest_distances(b, a).mean()))


def _fscore_from(d_ab, d_ba, tau) -> float:
    p = float(np.mean(d_ab < tau))
    r = float(np.mean(d_ba < tau))
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def fscore(a, b, tau: float) -> float:
    """F-score at ``tau``: precision is measured from ``a`` (prediction) to ``b``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    a, b = _cloud(a, "predicted"), _cloud(b, "reference")
    return _fscore_from(nearest_distances(a, b), nearest_distances(b, a), tau)


def cloud_metrics(pred, gt, thresholds=DEFAULT_THRESHOLDS) -> tuple[float, dict[float, float]]:
    """Chamfer distance and F-scores sharing one pair of nearest-neighbour queries."""
    a, b = _cloud(pred, "predicted"), _cloud(gt, "reference")
    d_ab, d_ba = nearest_distances(a, b), nearest_distances(b, a)
    cd = 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))
    return cd, {float(t): _fscore_from(d_ab, d_ba, t) for t in thresholds}


def sample_indices(n_points: int, n: int, seed: int) -> np.ndarray:
    if n_points == 0:
        raise EmptyCloud("cannot sample from an empty cloud")
    rng = np.random.default_rng(seed)
    if n > n_points:
        return rng.integers(0, n_points, size=n)
    return rng.choice(n_points, size=n, replace=False)


def sample_points(cloud, n: int, seed: int = 0) -> np.ndarray:
    """``n`` points drawn uniformly; with replacement only when ``n`` exceeds the cloud."""
    c = _points(cloud)
    return c[sample_indices(len(c), n, seed)]


def default_samples(*sizes: int) -> int:
    return OBJECT_SAMPLES if max(sizes) < 1_000_000 else SCENE_SAMPLES


def mask_metrics(pred, gt) -> tuple[float, float]:
    """(mIoU, DICE) of two (H, W, L) masks.

    IoU is averaged over layers whose union is non-empty; DICE is computed
    over the whole volume. Two empty masks score (1, 1).
    """
    p, g = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if p.shape != g.shape:
        raise ShapeMismatch(f"mask shapes {p.shape} and {g.shape} differ")
    pl = p.reshape(-1, p.shape[-1])
    gl = g.reshape(-1, g.shape[-1])
    inter = (pl & gl).sum(axis=0)
    union = (pl | gl).sum(axis=0)
    used = union > 0
    miou = float(np.mean(inter[used] / union[used])) if used.any() else 1.0
    total = int(pl.sum() + gl.sum())
    dice = 2.0 * float(inter.sum()) / total if total else 1.0
    return miou, dice


# ------------------------------------------------------------ evaluation


@dataclass
class MetricsReport:
    cd: float
    fs: dict[float, float]
    n_pred: int
    n_gt: int
    region: str = "overall"
    alignment: AlignmentResult | None = None
    image_id: str | None = None
    extra: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {"image_id": self.image_id, "region": self.region,
               "cd": self.cd if math.isfinite(self.cd) else None}
        for t in sorted(self.fs, reverse=True):
            rec[f"fs@{t:g}"] = self.fs[t]
        rec["n_pred"] = self.n_pred
        rec["n_gt"] = self.n_gt
        rec["alignment"] = (None if self.alignment is None
                            else {"s": self.alignment.s, "t": self.alignment.t})
        rec.update(self.extra)
        return rec


def region_layers(region: str, layers: int) -> np.ndarray:
    """Boolean selector over the layer axis for a named region."""
    sel = np.zeros(layers, dtype=bool)
    if region == "visible":
        sel[0] = True
    elif region == "unseen":
        sel[1:] = True
    elif region == "overall":
        sel[:] = True
    else:
        raise ValueError(f"unknown region {region!r}; expected one of {REGIONS}")
    return sel


def normalization_scale(cloud: np.ndarray) -> float:
    """Factor bringing the bounding-box diagonal of ``cloud`` to 1."""
    diag = float(np.linalg.norm(cloud.max(axis=0) - cloud.min(axis=0)))
    return 1.0 / diag if diag > 0 else 1.0


def evaluate_view_aligned(pred, gt: LariMap, gt_index, region: str = "overall", *,
                          pred_index=None, pred_layers=None, n_samples: int | None = None,
                          thresholds=DEFAULT_THRESHOLDS, seed: int = 0, normalize: bool = True,
                          fixed_samples: bool = False) -> MetricsReport:
    """Metrics of a camera-frame prediction against a ground-truth LaRI map.

    ``pred`` is either a :class:`LariMap` (with ``pred_index``) or an (N, 3)
    camera-frame cloud, optionally with per-point ``pred_layers``. Maps are
    scale-shift aligned to the ground truth using the pixels valid in the
    ground-truth mask; bare clouds have no correspondences and are used as is.
    Both sides are scaled so the ground-truth cloud's bounding-box diagonal
    is 1, sampled with the same seed, and compared with Chamfer / F-score.
    A prediction with nothing in the region scores F=0 and infinite CD.
    """
    layers = gt.layers
    gt_mask = mask_from_index(gt_index, layers)
    sel = region_layers(region, layers)
    gt_all, gt_lay = gt.points[gt_mask], np.nonzero(gt_mask)[-1]
    if not sel[gt_lay].any():
        raise EmptyRegion(f"ground truth has no valid points in region {region!r}")

    alignment = None
    if isinstance(pred, LariMap):
        if pred.points.shape != gt.points.shape:
            raise ShapeMismatch(f"prediction {pred.points.shape} vs ground truth {gt.points.shape}")
        if pred_index is None:
            raise ValueError("a predicted LaRI map needs its stopping index")
        corr = gt_mask & np.isfinite(pred.points).all(axis=-1)
        alignment = scale_shift_align(pred.points[corr], gt.points[corr])
        pmask = mask_from_index(pred_index, layers) & (np.asarray(gt_index) > 0)[..., None]
        pred_all = alignment.apply(pred.points[pmask])
        pred_lay = np.nonzero(pmask)[-1]
    else:
        pred_all = _points(pred)
        if pred_layers is None:
            if region != "overall":
                raise ValueError("region evaluation of a bare cloud needs per-point layer ids")
            pred_lay = np.zeros(len(pred_all), np.int64)
        else:
            pred_lay = np.asarray(pred_layers, dtype=np.int64)
            if len(pred_lay) != len(pred_all):
                raise ShapeMismatch("one layer id per predicted point is required")
    pred_in = (pred_lay < layers) & sel[np.clip(pred_lay, 0, layers - 1)]

    scale = normalization_scale(gt_all) if normalize else 1.0
    gt_all = gt_all * scale
    pred_all = pred_all * scale

    if n_samples is None:
        n_samples = default_samples(len(gt_all), len(pred_all))
    gt_in = sel[gt_lay]
    if fixed_samples:
        gi = sample_indices(len(gt_all), n_samples, seed)
        gt_s = gt_all[gi[gt_in[gi]]]
        if len(pred_all):
            pi = sample_indices(len(pred_all), n_samples, seed)
            pred_s = pred_all[pi[pred_in[pi]]]
        else:
            pred_s = pred_all
    else:
        gt_r = gt_all[gt_in]
        gt_s = gt_r[sample_indices(len(gt_r), n_samples, seed)]
        pred_r = pred_all[pred_in]
        pred_s = pred_r[sample_indices(len(pred_r), n_samples, seed)] if len(pred_r) else pred_r

    if len(gt_s) == 0:
        raise EmptyRegion(f"no ground-truth samples fell in region {region!r}")
    if len(pred_s) == 0:
        return MetricsReport(math.inf, {float(t): 0.0 for t in thresholds}, 0, len(gt_s),
                             region, alignment)
    cd, fs = cloud_metrics(pred_s, gt_s, thresholds)
    return MetricsReport(cd, fs, len(pred_s), len(gt_s), region, alignment)
