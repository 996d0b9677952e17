import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from lari.errors import IndexOutOfRange, NonFiniteLogits, ShapeMismatch
from lari.geometry import TriangleMesh, build_bvh, ray_all_hits
from lari.reference import box_hit_interval, first_hit_depth
from lari.render import (PinholeCamera, generate_ray, index_from_logits, index_from_mask, look_at,
                         mask_from_index, render_lari, select_points)
from lari.shapes import box, icosphere, torus

CAM64 = PinholeCamera(64.0, 64.0, 32.0, 32.0, 64, 64)


def two_cubes():
    return TriangleMesh.concatenate([box((0, 0, 2), 1.0), box((0, 0, 5), 1.0)])


def test_single_cube_layers():
    lari, index = render_lari(box((0, 0, 2), 1.0), None, CAM64, 5)
    assert set(np.unique(index)) <= {0, 2}
    center = lari.points[24:40, 24:40]
    np.testing.assert_allclose(center[..., 0, 2], 1.5, atol=1e-9)
    np.testing.assert_allclose(center[..., 1, 2], 2.5, atol=1e-9)
    assert np.isnan(lari.points[..., 2:, :]).all()
    assert np.isnan(lari.points[index == 0]).all()


def test_points_lie_on_pixel_rays():
    lari, index = render_lari(box((0, 0, 2), 1.0), None, CAM64, 5)
    d = CAM64.camera_directions()
    p = lari.points[..., 0, :]
    ok = index > 0
    t = np.linalg.norm(p[ok], axis=-1)
    np.testing.assert_allclose(p[ok], t[:, None] * d[ok], atol=1e-12)


def test_two_cubes_matches_slab_oracle():
    lari, index = render_lari(two_cubes(), None, CAM64, 5)
    d = CAM64.camera_directions()
    n1, f1, h1 = box_hit_interval(np.zeros(3), d, (-0.5, -0.5, 1.5), (0.5, 0.5, 2.5))
    n2, f2, h2 = box_hit_interval(np.zeros(3), d, (-0.5, -0.5, 4.5), (0.5, 0.5, 5.5))
    both = h1 & h2
    assert both.sum() > 100
    assert (index[both] == 4).all()
    expect = np.stack([n1, f1, n2, f2], axis=-1)[both][..., None] * d[both][:, None, :]
    np.testing.assert_allclose(lari.points[both][:, :4], expect, atol=1e-9)


def test_overflow_is_counted():
    lari, index = render_lari(two_cubes(), None, CAM64, 3)
    assert index.max() == 3
    assert lari.overflow_pixels == int(((lari.hit_count > 3)).sum()) > 0
    assert lari.hit_count.max() == 4


def test_layer_zero_matches_reference():
    cam = PinholeCamera.from_fov(48, 40, 60.0, look_at((1.5, 1.0, 3.0), (0, 0, 0)))
    mesh = torus()
    lari, index = render_lari(mesh, None, cam, 4)
    ref = first_hit_depth(mesh, cam)
    np.testing.assert_array_equal(np.isnan(ref), index == 0)
    np.testing.assert_allclose(lari.points[..., 0, 2][index > 0], ref[index > 0], atol=1e-9)


def test_render_agrees_with_single_ray_query():
    mesh = icosphere(2)
    cam = PinholeCamera.from_fov(24, 24, 50.0, look_at((0, 0.5, 3.0), (0, 0, 0)))
    bvh = build_bvh(mesh)
    lari, index = render_lari(mesh, bvh, cam, 4)
    for v, u in [(12, 12), (3, 17), (20, 5), (0, 0)]:
        hits = ray_all_hits(bvh, mesh, generate_ray(cam, u, v))
        assert index[v, u] == min(len(hits), 4)
        world = lari.points[v, u, : index[v, u]] @ cam.rotation.T + cam.position
        np.testing.assert_allclose(world, np.reshape([h.point for h in hits[:4]], (-1, 3)), atol=1e-9)


def test_worker_count_does_not_change_output():
    cam = PinholeCamera.from_fov(40, 40, 55.0, look_at((2, 1, 2), (0, 0, 0)))
    mesh = torus()
    a, ia = render_lari(mesh, None, cam, 5, workers=1)
    b, ib = render_lari(mesh, None, cam, 5, workers=4)
    assert a.points.tobytes() == b.points.tobytes()
    np.testing.assert_array_equal(ia, ib)


def test_camera_validation():
    with pytest.raises(ValueError):
        PinholeCamera(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(ValueError):
        PinholeCamera(1.0, 1.0, 9.0, 1.0, 4, 4)
    bad = np.eye(4)
    bad[0, 0] = 2.0
    with pytest.raises(ValueError):
        PinholeCamera(1.0, 1.0, 2.0, 2.0, 4, 4, bad)


def test_look_at_axes():
    pose = look_at((0, 0, 5), (0, 0, 0))
    np.testing.assert_allclose(pose[:3, 2], [0, 0, -1])
    np.testing.assert_allclose(pose[:3, 0], [1, 0, 0])
    np.testing.assert_allclose(pose[:3, 1], [0, -1, 0])


def test_mask_from_index_exhaustive():
    index = np.arange(6)
    mask = mask_from_index(index, 5)
    for c in range(6):
        assert mask[c].tolist() == [l + 1 <= c for l in range(5)]
    with pytest.raises(IndexOutOfRange):
        mask_from_index(np.array([6]), 5)
    with pytest.raises(IndexOutOfRange):
        mask_from_index(np.array([-1]), 5)


def test_index_from_logits_ties_go_low():
    assert index_from_logits(np.array([1.0, 3.0, 3.0, 0.0])) == 1
    assert index_from_logits(np.zeros(6)) == 0
    with pytest.raises(NonFiniteLogits):
        index_from_logits(np.array([0.0, np.nan]))


def test_select_points_shape_check():
    lari, index = render_lari(box((0, 0, 2), 1.0), None, CAM64, 5)
    pts, lay = select_points(lari, mask_from_index(index, 5), return_layers=True)
    assert len(pts) == index.sum()
    assert set(np.unique(lay)) == {0, 1}
    with pytest.raises(ShapeMismatch):
        select_points(lari, np.ones((64, 64, 4), bool))


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.int64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.integers(0, 5)))
def test_mask_index_round_trip(index):
    mask = mask_from_index(index, 5)
    np.testing.assert_array_equal(index_from_mask(mask), index)
    # valid layers form a prefix
    assert not (np.diff(mask.astype(int), axis=-1) > 0).any()


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.just(6)),
                  elements=st.floats(-5, 5, allow_nan=False)))
def test_logits_argmax_is_first_maximum(logits):
    idx = index_from_logits(logits)
    for row, k in zip(logits, idx):
        assert row[k] == row.max()
        assert (row[:k] < row.max()).all()
