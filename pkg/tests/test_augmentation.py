import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spcdkit.augmentation import (DEFAULT_TRANSFORMS, STOCHASTIC, TRANSFORM_KINDS,
                                  AugmentationError, MagnificationPolicy, TransformSpec,
                                  augment_record, derive_seed, magnification_rect,
                                  natural_magnify, plan_balance, transform)
from spcdkit.imaging import Rect, RgbImage, crop, resize


def rand_img(h=40, w=40, seed=0):
    return RgbImage(np.random.default_rng(seed).random((h, w, 3)))


def test_center_and_clamp_arithmetic():
    assert magnification_rect(1000, 1000, Rect(450, 450, 100, 100), 2.0) == Rect(400, 400, 200, 200)


def test_crop_shifted_at_border():
    r = magnification_rect(100, 100, Rect(0, 0, 20, 20), 2.0)
    assert r == Rect(0, 0, 40, 40)
    r = magnification_rect(100, 100, Rect(90, 85, 10, 15), 2.0)
    assert r == Rect(70, 70, 30, 30)


def test_crop_shrinks_only_when_longer_than_image():
    r = magnification_rect(100, 60, Rect(30, 10, 40, 40), 2.5)
    assert (r.w, r.h) == (100, 60)


def test_full_image_roi_collapses_factors():
    img = rand_img(30, 50)
    crops = natural_magnify(img, Rect(0, 0, 50, 30), MagnificationPolicy(output_size=32))
    ref = resize(img, 32, 32)
    assert len(crops) == 3
    assert all(np.array_equal(c.pixels, ref.pixels) for c in crops)


def test_roi_out_of_bounds():
    with pytest.raises(AugmentationError):
        natural_magnify(rand_img(), Rect(30, 30, 20, 20))


def test_policy_validation():
    with pytest.raises(ValueError):
        MagnificationPolicy(factors=(1.5, 1.25))
    with pytest.raises(ValueError):
        MagnificationPolicy(factors=(0.5,))
    with pytest.raises(ValueError):
        MagnificationPolicy(output_size=16)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_crop_contains_roi(data):
    w = data.draw(st.integers(1, 300))
    h = data.draw(st.integers(1, 300))
    x = data.draw(st.integers(0, w - 1))
    y = data.draw(st.integers(0, h - 1))
    roi = Rect(x, y, data.draw(st.integers(1, w - x)), data.draw(st.integers(1, h - y)))
    f = data.draw(st.floats(1.0, 4.0))
    r = magnification_rect(w, h, roi, f)
    assert r.fits(w, h)
    assert r.x <= roi.x and r.y <= roi.y
    assert r.x + r.w >= roi.x + roi.w and r.y + r.h >= roi.y + roi.h
    side = int(np.ceil(f * max(roi.w, roi.h) - 1e-9))
    assert r.w == min(side, w) and r.h == min(side, h)


def test_mirror_is_an_involution():
    img = rand_img()
    m = TransformSpec("mirror")
    assert np.array_equal(transform(transform(img, m), m).pixels, img.pixels)


def test_rotate90_four_times_is_identity():
    img = rand_img()
    spec = TransformSpec("rotate90")
    out = img
    for _ in range(4):
        out = transform(out, spec)
    assert np.array_equal(out.pixels, img.pixels)


def test_noise_seed_contract():
    img = rand_img()
    a = transform(img, TransformSpec("gaussian_noise", 0.05, seed=1))
    b = transform(img, TransformSpec("gaussian_noise", 0.05, seed=1))
    c = transform(img, TransformSpec("gaussian_noise", 0.05, seed=2))
    assert np.array_equal(a.pixels, b.pixels)
    assert not np.array_equal(a.pixels, c.pixels)


def test_seed_required_iff_stochastic():
    img = rand_img()
    with pytest.raises(AugmentationError):
        transform(img, TransformSpec("salt_pepper"))
    with pytest.raises(AugmentationError):
        transform(img, TransformSpec("mirror", seed=3))


@pytest.mark.parametrize("kind, mag", [
    ("rotate45", 30), ("rotate90", 180), ("gaussian_noise", 0.2), ("gaussian_noise", 0),
    ("salt_pepper", 0.1), ("translate", 0.25), ("shear", 0.5), ("contrast", 2.0),
    ("sharpen", 0), ("sharpen", 1.5),
])
def test_magnitude_ranges(kind, mag):
    with pytest.raises(AugmentationError):
        TransformSpec(kind, mag)


def test_unknown_kind():
    with pytest.raises(AugmentationError):
        TransformSpec("elastic")


@pytest.mark.parametrize("kind", TRANSFORM_KINDS)
def test_every_kind_keeps_shape_and_range(kind):
    img = rand_img(24, 30)
    spec = TransformSpec(kind, seed=5 if kind in STOCHASTIC else None)
    out = transform(img, spec)
    assert out.shape == img.shape
    assert out.pixels.min() >= 0 and out.pixels.max() <= 1


def test_translate_reflects_borders():
    px = np.zeros((10, 10, 3))
    px[:, :3] = 1.0
    out = transform(RgbImage(px), TransformSpec("translate", 0.2)).pixels
    # shifted right by 2 columns, exposed columns filled by reflection
    assert np.array_equal(out[:, 2:], px[:, :8])
    assert np.array_equal(out[:, :2], px[:, 1::-1])


def test_rotate90_on_non_square_image():
    out = transform(rand_img(20, 30), TransformSpec("rotate90"))
    assert out.shape == (20, 30)


def test_contrast_and_sharpen_on_constant_image():
    img = RgbImage(np.full((8, 8, 3), 0.4))
    for spec in (TransformSpec("contrast", 1.5), TransformSpec("sharpen", 1.0)):
        assert np.allclose(transform(img, spec).pixels, 0.4, atol=1e-12)


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, "img1", 0, 4) == derive_seed(0, "img1", 0, 4)
    seeds = {derive_seed(0, "img1", f, v) for f in range(3) for v in range(8)}
    assert len(seeds) == 24
    assert derive_seed(0, "img1", 0, 4) != derive_seed(1, "img1", 0, 4)


def test_augment_record_counts():
    img = rand_img(80, 80)
    roi = Rect(30, 30, 20, 20)
    policy = MagnificationPolicy(output_size=32)
    patches = augment_record(img, roi, policy, DEFAULT_TRANSFORMS, source_id="a")
    assert len(DEFAULT_TRANSFORMS) == 7
    assert len(patches) == 24
    assert len(augment_record(img, roi, policy, (), source_id="a")) == 3
    names = [p.provenance.patch_name for p in patches]
    assert len(set(names)) == 24
    assert all(p.provenance.source_id == "a" for p in patches)
    assert all(p.patch.shape == (32, 32) for p in patches)


def test_augment_record_replay():
    img = rand_img(64, 64)
    roi = Rect(20, 20, 16, 16)
    policy = MagnificationPolicy(output_size=32)
    a = augment_record(img, roi, policy, base_seed=7, source_id="x")
    b = augment_record(img, roi, policy, base_seed=7, source_id="x")
    c = augment_record(img, roi, policy, base_seed=8, source_id="x")
    assert [p.patch.checksum() for p in a] == [p.patch.checksum() for p in b]
    assert [p.patch.checksum() for p in a] != [p.patch.checksum() for p in c]


def test_augment_record_selection():
    img = rand_img(64, 64)
    out = augment_record(img, Rect(20, 20, 16, 16), MagnificationPolicy(output_size=32),
                         selection=[(0, 0), (2, 3)])
    assert [(p.provenance.factor_index, p.provenance.variant_index) for p in out] == [(0, 0), (2, 3)]


def test_table1_ischaemia_plan():
    plans = plan_balance({"absent": 1431, "present": 235}, n_factors=3, n_variants=7)
    assert plans["present"].total == 235 * 21 == 4935
    assert plans["absent"].total == 4935


def test_table1_infection_plan():
    plans = plan_balance({"none": 684, "present": 982}, n_factors=3, n_variants=7,
                         target=982 * 3)
    assert plans["none"].total == plans["present"].total == 2946


def test_toy_two_vs_fourteen():
    plans = plan_balance({1: 2, 0: 14})
    assert plans[1].total == plans[0].total == 48
    # every majority record keeps its plain crops
    for sel in plans[0].selections:
        assert {(f, 0) for f in range(3)} <= set(sel)


def test_full_mode_within_one_granule():
    plans = plan_balance({1: 2, 0: 14}, mode="full")
    granule = 14 * 3
    assert abs(plans[0].total - plans[1].total) <= granule


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(1, 60), st.integers(1, 4), st.integers(1, 9),
       st.sampled_from(["exact", "full"]), st.integers(0, 1000))
def test_plan_balance_properties(a, b, nf, nv, mode, seed):
    counts = {0: a, 1: b}
    minority = 0 if a <= b else 1
    target = counts[minority] * nf * nv
    if max(a, b) * nf * nv < target:
        return
    plans = plan_balance(counts, nf, nv, mode=mode, seed=seed)
    assert plans[minority].total == target
    other = plans[1 - minority]
    if mode == "exact":
        assert other.total == target
    else:
        assert abs(other.total - target) <= counts[1 - minority] * nf
    for p in plans.values():
        assert len(p.selections) == p.n_records
        for sel in p.selections:
            assert len(set(sel)) == len(sel)
            assert all(0 <= f < nf and 0 <= v < nv for f, v in sel)
    assert plan_balance(counts, nf, nv, mode=mode, seed=seed)[1 - minority].selections == other.selections


def test_plan_balance_errors():
    with pytest.raises(ValueError):
        plan_balance({})
    with pytest.raises(ValueError):
        plan_balance({0: 1, 1: 5}, mode="random")
    with pytest.raises(ValueError):
        plan_balance({0: 1, 1: 5}, target=1000)


def test_crop_then_resize_matches_pipeline():
    img = rand_img(100, 120, 3)
    roi = Rect(40, 30, 20, 25)
    policy = MagnificationPolicy(output_size=48)
    crops = natural_magnify(img, roi, policy)
    for f, c in zip(policy.factors, crops):
        r = magnification_rect(120, 100, roi, f)
        assert np.array_equal(c.pixels, resize(crop(img, r), 48, 48).pixels)
