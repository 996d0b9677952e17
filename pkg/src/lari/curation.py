"""Dataset curation: multi-view layer statistics and the object filters."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Bvh, TriangleMesh, build_bvh
from .render import PinholeCamera, look_at, render_lari

DEFAULT_ELEVATIONS = (0.0, 30.0, 60.0)
DEFAULT_AZIMUTHS = 12
DEFAULT_RADIUS = 2.5
DEFAULT_FOV = 49.1
STATS_RESOLUTION = 128
STATS_LAYERS = 5
MAX_DEEP_FRACTION = 0.15
MIN_COVERAGE = 0.05
WORLD_UP = (0.0, 1.0, 0.0)


@dataclass(frozen=True)
class ViewSpec:
    """Orbit camera placement; ``radius`` is in units of the framing sphere radius."""

    elevation: float
    azimuth: float
    radius: float = DEFAULT_RADIUS
    look_at: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not self.radius > 1:
            raise ValueError("view radius must exceed the framing sphere radius")
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError("elevation must lie in [-90, 90] degrees")

    def pose(self, center, sphere_radius: float) -> np.ndarray:
        """Camera-to-world pose (world y up, azimuth 0 on +z)."""
        c = np.asarray(center if self.look_at is None else self.look_at, dtype=np.float64)
        el, az = math.radians(self.elevation), math.radians(self.azimuth)
        offset = np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
        return look_at(c + self.radius * sphere_radius * offset, c, WORLD_UP)


def sample_views(elevations=DEFAULT_ELEVATIONS, n_azimuth: int = DEFAULT_AZIMUTHS,
                 radius: float = DEFAULT_RADIUS, seed: int = 0, jitter: bool = False,
                 look_at=None) -> list[ViewSpec]:
    """Evenly spaced azimuths (from 0 degrees) at every elevation.

    ``seed`` only matters with ``jitter``: one random offset, shared by all
    elevations, rotates the azimuth ring.
    """
    if n_azimuth < 1:
        raise ValueError("n_azimuth must be >= 1")
    step = 360.0 / n_azimuth
    offset = float(np.random.default_rng(seed).uniform(0.0, step)) if jitter else 0.0
    return [ViewSpec(float(el), (offset + i * step) % 360.0, radius,
                     None if look_at is None else tuple(look_at))
            for el in elevations for i in range(n_azimuth)]


def view_camera(view: ViewSpec, center, sphere_radius: float, resolution: int,
                fov_deg: float = DEFAULT_FOV) -> PinholeCamera:
    return PinholeCamera.from_fov(resolution, resolution, fov_deg, view.pose(center, sphere_radius))


@dataclass
class LayerOccupancyStats:
    """``per_view[v, k]``: fraction of pixels of view ``v`` with more than ``k`` hits.

    Entry 0 is the foreground coverage; entry ``L`` counts pixels that
    overflow the layer budget.
    """

    per_view: np.ndarray
    layers: int

    @property
    def mean(self) -> np.ndarray:
        return self.per_view.mean(axis=0)

    @property
    def max(self) -> np.ndarray:
        return self.per_view.max(axis=0)

    def aggregate(self, how: str = "mean") -> np.ndarray:
        if how not in ("mean", "max"):
            raise ValueError("aggregate must be 'mean' or 'max'")
        return self.mean if how == "mean" else self.max

    def to_record(self) -> dict:
        return {"layers": self.layers, "mean": self.mean.tolist(), "max": self.max.tolist()}


def occupancy_from_counts(hit_count: np.ndarray, layers: int) -> np.ndarray:
    """Exceedance fractions (L + 1 values) of one view's per-pixel hit counts."""
    c = np.asarray(hit_count).ravel()
    return np.array([(c > k).mean() for k in range(layers + 1)])


def layer_occupancy(mesh: TriangleMesh, views, layers: int = STATS_LAYERS,
                    resolution: int = STATS_RESOLUTION, *, bvh: Bvh | None = None,
                    frame: tuple | None = None, fov_deg: float = DEFAULT_FOV,
                    workers: int | None = None) -> LayerOccupancyStats:
    """Render every view and collect per-layer exceedance fractions.

    ``frame`` = (center, radius) fixes the sphere the cameras orbit; by
    default it is the mesh's own bounding sphere.
    """
    views = list(views)
    if not views:
        raise ValueError("at least one view is required")
    bvh = build_bvh(mesh) if bvh is None else bvh
    center, radius = mesh.bounding_sphere() if frame is None else frame
    radius = max(float(radius), 1e-12)
    rows = []
    for view in views:
        cam = view_camera(view, center, radius, resolution, fov_deg)
        lari, _ = render_lari(mesh, bvh, cam, layers, workers=workers)
        rows.append(occupancy_from_counts(lari.hit_count, layers))
    return LayerOccupancyStats(np.asarray(rows), layers)


class Reason(str, enum.Enum):
    INTERNAL_STRUCTURE = "InternalStructure"
    TOO_SMALL = "TooSmall"


@dataclass
class FilterVerdict:
    accepted: bool
    reasons: list[tuple[Reason, float]] = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"accepted": self.accepted,
                "reasons": [{"reason": r.value, "value": v} for r, v in self.reasons],
                "thresholds": self.thresholds}


def filter_object(stats: LayerOccupancyStats, max_deep_fraction: float = MAX_DEEP_FRACTION,
                  min_coverage: float = MIN_COVERAGE, aggregate: str = "mean") -> FilterVerdict:
    """Reject objects with much geometry past the second layer, or too small in frame."""
    agg = stats.aggregate(aggregate)
    deep = float(agg[2]) if len(agg) > 2 else 0.0
    coverage = float(agg[0])
    reasons = []
    if deep > max_deep_fraction:
        reasons.append((Reason.INTERNAL_STRUCTURE, deep))
    if coverage < min_coverage:
        reasons.append((Reason.TOO_SMALL, coverage))
    return FilterVerdict(not reasons, reasons,
                         {"max_deep_fraction": max_deep_fraction, "min_coverage": min_coverage,
                          "aggregate": aggregate})
