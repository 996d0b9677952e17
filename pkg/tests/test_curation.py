import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lari.curation import (FilterVerdict, LayerOccupancyStats, Reason, ViewSpec, filter_object,
                           layer_occupancy, occupancy_from_counts, sample_views)
from lari.geometry import TriangleMesh
from lari.shapes import box

FIXED = (np.zeros(3), 1.0)


def test_default_views():
    views = sample_views()
    assert len(views) == 36
    assert sorted({v.azimuth for v in views}) == [30.0 * k for k in range(12)]
    assert sorted({v.elevation for v in views}) == [0.0, 30.0, 60.0]
    assert sample_views([0.0], 1)[0].azimuth == 0.0


def test_view_validation():
    with pytest.raises(ValueError):
        ViewSpec(0.0, 0.0, radius=0.9)
    with pytest.raises(ValueError):
        ViewSpec(95.0, 0.0)
    with pytest.raises(ValueError):
        sample_views(n_azimuth=0)


def test_frontal_view_looks_down_minus_z():
    pose = ViewSpec(0.0, 0.0).pose(np.zeros(3), 1.0)
    np.testing.assert_allclose(pose[:3, 3], [0, 0, 2.5])
    np.testing.assert_allclose(pose[:3, 2], [0, 0, -1], atol=1e-12)


def test_occupancy_from_counts():
    counts = np.array([[0, 1], [2, 7]])
    np.testing.assert_allclose(occupancy_from_counts(counts, 3), [0.75, 0.5, 0.25, 0.25])


def test_filter_verdicts():
    views = sample_views([0.0, 30.0], 4)
    cube = layer_occupancy(box(size=1.0), views, frame=FIXED)
    nested = layer_occupancy(TriangleMesh.concatenate([box(size=1.0), box(size=0.8)]), views, frame=FIXED)
    tiny = layer_occupancy(box(size=0.1), views, frame=FIXED)
    assert filter_object(cube).accepted
    v = filter_object(nested)
    assert not v.accepted and v.reasons[0][0] is Reason.INTERNAL_STRUCTURE
    v = filter_object(tiny)
    assert not v.accepted and [r for r, _ in v.reasons] == [Reason.TOO_SMALL]


def test_object_frame_hides_small_size():
    # framed by its own bounding sphere a small object fills the view like a big one
    views = sample_views([0.0], 3)
    tiny = layer_occupancy(box(size=0.1), views)
    big = layer_occupancy(box(size=1.0), views)
    np.testing.assert_allclose(tiny.per_view, big.per_view, atol=1e-3)


def test_thresholds_recorded():
    stats = LayerOccupancyStats(np.array([[0.5, 0.4, 0.2, 0.0]]), 3)
    v = filter_object(stats, max_deep_fraction=0.3, aggregate="max")
    assert v.accepted
    assert v.to_record()["thresholds"] == {"max_deep_fraction": 0.3, "min_coverage": 0.05, "aggregate": "max"}
    assert isinstance(v, FilterVerdict)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 36), offset=st.integers(0, 35))
def test_azimuths_invariant_under_step_rotation(n, offset):
    az = sorted(v.azimuth for v in sample_views([0.0], n))
    step = 360.0 / n
    shifted = sorted(round((a + offset * step) % 360.0, 9) % 360.0 for a in az)
    assert np.allclose(shifted, [round(a, 9) for a in az], atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=30))
def test_occupancy_is_non_increasing(counts):
    occ = occupancy_from_counts(np.array(counts), 5)
    assert (np.diff(occ) <= 0).all()
    assert 0.0 <= occ.min() and occ.max() <= 1.0
