import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import label as nd_label

from spcdkit.imaging import LabImage, RgbImage, rgb_to_lab
from spcdkit.slic import (SlicParams, SuperpixelMap, _assign, _seed_centers, _update,
                          boundary_mask, enforce_connectivity, grid_interval,
                          paint_mean_colors, segment, superpixel_means, superpixels)


def check_partition(smap):
    labels = smap.labels
    assert labels.min() == 0 and labels.max() == smap.count - 1
    assert np.all(np.bincount(labels.ravel(), minlength=smap.count) > 0)
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    for c in range(smap.count):
        _, n = nd_label(labels == c, structure=four)
        assert n == 1, f"label {c} has {n} components"


def half_red_black(w=32, h=16):
    px = np.zeros((h, w, 3))
    px[:, : w // 2, 0] = 1.0
    return RgbImage(px)


@pytest.mark.parametrize("n, k, s", [(65536, 200, 18.102), (100, 100, 1.0), (400, 4, 10.0)])
def test_grid_interval(n, k, s):
    assert grid_interval(n, k) == pytest.approx(s, abs=5e-4)


def test_grid_interval_rejects_zero_k():
    with pytest.raises(ValueError):
        grid_interval(100, 0)


def test_params_validated():
    for bad in (dict(k=0), dict(m=0), dict(iterations=0), dict(min_region_fraction=1.0)):
        with pytest.raises(ValueError):
            SlicParams(**bad)


def test_uniform_image_gives_regular_grid():
    rgb = RgbImage(np.full((64, 64, 3), 0.4))
    smap = superpixels(rgb, SlicParams(k=16))
    assert smap.count == 16
    assert np.all(np.abs(smap.sizes() - 256) <= 25.6)
    check_partition(smap)


def test_half_red_black_boundary_matches_brute_force():
    rgb = half_red_black()
    lab = rgb_to_lab(rgb)
    params = SlicParams(k=2)
    smap = segment(lab, params)
    assert smap.count == 2
    # brute force: every pixel to its nearest final centre, no search window
    h, w = smap.labels.shape
    ys, xs = np.mgrid[0:h, 0:w]
    wgt = params.m / smap.step
    d = np.stack([np.linalg.norm(lab.pixels - c[:3], axis=2)
                  + wgt * np.hypot(xs - c[3], ys - c[4]) for c in smap.centers])
    oracle = np.argmin(d, axis=0)
    assert np.array_equal(oracle, smap.labels)
    # the label boundary sits on the colour boundary, column by column
    for row in smap.labels:
        switch = np.nonzero(row[1:] != row[:-1])[0]
        assert switch.size == 1 and abs(int(switch[0]) + 1 - w // 2) <= 1


def test_k_equals_pixel_count():
    rgb = RgbImage(np.random.default_rng(0).random((5, 6, 3)))
    smap = superpixels(rgb, SlicParams(k=30))
    assert smap.count == 30
    assert sorted(smap.labels.ravel().tolist()) == list(range(30))


def test_k_exceeding_pixels_is_an_error():
    with pytest.raises(ValueError):
        superpixels(RgbImage(np.zeros((3, 3, 3))), SlicParams(k=10))


def _map(labels, step):
    labels = np.asarray(labels)
    return SuperpixelMap(labels, np.zeros((labels.max() + 1, 5)), step)


def test_connected_map_unchanged_up_to_compaction():
    labels = np.array([[5, 5, 2, 2], [5, 5, 2, 2], [7, 7, 7, 7]]) - 2
    labels[labels == 5] = 1
    lab = LabImage(np.zeros((3, 4, 3)))
    out = enforce_connectivity(_map(labels, 1.0), lab)
    assert out.labels.tolist() == [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 2, 2]]


def test_orphan_is_absorbed():
    labels = np.zeros((5, 5), dtype=int)
    labels[2, 2] = 1
    out = enforce_connectivity(_map(labels, 5.0), LabImage(np.zeros((5, 5, 3))))
    assert out.count == 1 and np.all(out.labels == 0)


def test_checkerboard_collapses_to_one_label():
    yy, xx = np.mgrid[0:8, 0:8]
    labels = (yy + xx) % 2
    out = enforce_connectivity(_map(labels, 4.0), LabImage(np.zeros((8, 8, 3))), 0.25)
    assert out.count == 1


def test_large_regions_survive():
    labels = np.zeros((10, 10), dtype=int)
    labels[:, 5:] = 1
    labels[0, 0] = 1    # stray pixel of label 1 on the left
    out = enforce_connectivity(_map(labels, 3.0), LabImage(np.zeros((10, 10, 3))))
    assert out.count == 2
    assert out.labels[0, 0] == out.labels[5, 0]
    check_partition(out)


def test_paint_constant_image():
    rgb = RgbImage(np.full((16, 16, 3), 0.3))
    assert np.array_equal(paint_mean_colors(rgb, superpixels(rgb, SlicParams(k=4))).pixels,
                          rgb.pixels)


def test_paint_two_pixel_mean():
    rgb = RgbImage(np.array([[[0.0] * 3, [1.0] * 3]]))
    smap = _map(np.zeros((1, 2), dtype=int), 1.0)
    assert np.all(paint_mean_colors(rgb, smap).pixels == 0.5)


def test_paint_matches_accumulation_oracle():
    rgb = RgbImage(np.random.default_rng(3).random((32, 32, 3)))
    smap = superpixels(rgb, SlicParams(k=8))
    painted = paint_mean_colors(rgb, smap).pixels
    for c in range(smap.count):
        acc = np.zeros(3)
        n = 0
        for y in range(32):
            for x in range(32):
                if smap.labels[y, x] == c:
                    acc += rgb.pixels[y, x]
                    n += 1
        assert np.all(np.abs(painted[smap.labels == c] - acc / n) <= 1e-12)


def test_paint_dimension_mismatch():
    with pytest.raises(ValueError):
        paint_mean_colors(RgbImage(np.zeros((4, 4, 3))), _map(np.zeros((4, 5), dtype=int), 1.0))


def test_single_superpixel_paints_global_mean():
    rgb = RgbImage(np.random.default_rng(4).random((12, 12, 3)))
    smap = superpixels(rgb, SlicParams(k=1))
    assert smap.count == 1
    assert np.allclose(paint_mean_colors(rgb, smap).pixels, rgb.pixels.mean(axis=(0, 1)), atol=1e-12)


def test_boundary_mask_marks_label_changes():
    smap = _map(np.array([[0, 0, 1], [0, 0, 1]]), 1.0)
    assert boundary_mask(smap).tolist() == [[False, False, True], [False, False, True]]


def _raw_rounds(lab, params):
    """The assignment/update loop without connectivity enforcement."""
    px = lab.pixels
    h, w = px.shape[:2]
    step = grid_interval(h * w, params.k)
    wgt = params.m / step
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    centers, labels = _seed_centers(px, params.k)
    for _ in range(params.iterations):
        labels, _ = _assign(px, xs, ys, centers, labels, step, wgt)
        yield labels, centers, step
        centers, labels = _update(px, xs, ys, centers, labels, wgt)


rgb_arrays = st.tuples(st.integers(8, 40), st.integers(8, 40), st.integers(0, 2 ** 32 - 1))


@settings(max_examples=25, deadline=None)
@given(rgb_arrays, st.integers(1, 30), st.floats(1.0, 40.0))
def test_partition_properties(shape, k, m):
    h, w, seed = shape
    rgb = RgbImage(np.random.default_rng(seed).random((h, w, 3)))
    smap = superpixels(rgb, SlicParams(k=k, m=m, iterations=4))
    check_partition(smap)
    trace = np.array(smap.cost_trace)
    assert np.all(np.diff(trace) <= 1e-9)


@settings(max_examples=15, deadline=None)
@given(rgb_arrays, st.integers(1, 30))
def test_assignment_locality(shape, k):
    h, w, seed = shape
    lab = rgb_to_lab(RgbImage(np.random.default_rng(seed).random((h, w, 3))))
    ys, xs = np.mgrid[0:h, 0:w]
    for labels, centers, step in _raw_rounds(lab, SlicParams(k=k, iterations=4)):
        c = centers[labels]
        cheb = np.maximum(np.abs(xs - c[..., 3]), np.abs(ys - c[..., 4]))
        assert cheb.max() <= 2 * step + 1e-9


def test_determinism():
    rgb = RgbImage(np.random.default_rng(9).random((40, 48, 3)))
    a, b = superpixels(rgb, SlicParams(k=20)), superpixels(rgb, SlicParams(k=20))
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.centers, b.centers)
    assert a.cost_trace == b.cost_trace


def test_superpixel_means_shape():
    rgb = RgbImage(np.random.default_rng(2).random((20, 20, 3)))
    smap = superpixels(rgb, SlicParams(k=4))
    assert superpixel_means(rgb, smap).shape == (smap.count, 3)


def test_centres_match_region_means():
    rgb = RgbImage(np.random.default_rng(5).random((24, 24, 3)))
    lab = rgb_to_lab(rgb)
    smap = segment(lab, SlicParams(k=9))
    c = 0
    ys, xs = np.nonzero(smap.labels == c)
    assert smap.centers[c, 3] == pytest.approx(xs.mean())
    assert smap.centers[c, 4] == pytest.approx(ys.mean())
    assert np.allclose(smap.centers[c, :3], lab.pixels[ys, xs].mean(axis=0))
    assert math.isfinite(smap.step)
