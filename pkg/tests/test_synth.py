import hashlib
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neglectnet.config import ConfigError, SynthConfig
from neglectnet.synth import (alpha_bbox, augment, compose, load_split, make_dataset, make_sample,
                              synth_background, synth_foreground)

CFG = SynthConfig(image_h=32, image_w=32, seed=0)


def test_background_shape_range_and_determinism():
    a = synth_background(CFG, np.random.default_rng(1))
    b = synth_background(CFG, np.random.default_rng(1))
    assert a.shape == (3, 32, 32)
    assert a.min() >= -1 and a.max() <= 1
    np.testing.assert_array_equal(a, b)


def test_backgrounds_never_flat():
    rng = np.random.default_rng(2)
    stds = [synth_background(CFG, rng).std() for _ in range(1000)]
    assert min(stds) > 0.01


def test_too_small_rejected():
    with pytest.raises(ConfigError):
        SynthConfig(image_h=4, image_w=32)


@pytest.mark.parametrize("style", [0, 1, 2])
def test_foreground_soft_edge_and_bbox_fraction(style):
    mix = [0.0, 0.0, 0.0]
    mix[style] = 1.0
    cfg = replace(CFG, fg_mix=tuple(mix))
    rng = np.random.default_rng(3)
    for _ in range(40):
        _, alpha = synth_foreground(cfg, rng)
        assert alpha.min() >= 0 and alpha.max() <= 1
        assert np.any((alpha > 0) & (alpha < 1))
        r0, c0, r1, c1 = alpha_bbox(alpha)
        assert 0.25 <= (r1 - r0) / 32 <= 0.9
        assert 0.25 <= (c1 - c0) / 32 <= 0.9


def test_foreground_deterministic():
    a = synth_foreground(CFG, np.random.default_rng(4))
    b = synth_foreground(CFG, np.random.default_rng(4))
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)


def _blob(h=32, w=32, val=1.0, box=(8, 8, 20, 24)):
    alpha = np.zeros((1, h, w), np.float32)
    alpha[0, box[0]:box[2], box[1]:box[3]] = val
    return alpha


def test_compose_zero_alpha():
    bg = synth_background(CFG, np.random.default_rng(5))
    s = compose(bg, np.ones_like(bg), np.zeros((1, 32, 32), np.float32), np.random.default_rng(0))
    np.testing.assert_array_equal(s.x, bg)
    assert not s.z_g.any()


def test_compose_opaque_region_equals_foreground():
    bg = synth_background(CFG, np.random.default_rng(6))
    fg = np.full_like(bg, 0.25)
    s = compose(bg, fg, _blob(), np.random.default_rng(1))
    inside = s.z_g[0] == 1
    assert inside.sum() == 12 * 16
    np.testing.assert_array_equal(s.x[:, inside], s.fg[:, inside])
    np.testing.assert_array_equal(s.x[:, ~inside], bg[:, ~inside])


def test_margin_zero_touches_edge():
    bg = synth_background(CFG, np.random.default_rng(7))
    for seed in range(20):
        s = compose(bg, np.zeros_like(bg), _blob(), np.random.default_rng(seed), margin=0)
        t, l, b, r = s.bbox
        assert t == 0 or l == 0 or b == 32 or r == 32


def test_margin_within_half_side():
    for i in range(50):
        s = make_sample(CFG, i)
        t, l, b, r = s.bbox
        side = max(b - t, r - l)
        assert 0 <= s.margin <= side / 2
        assert min(t, l, 32 - b, 32 - r) == s.margin


def test_oversized_foreground_rejected():
    bg = np.zeros((3, 16, 16), np.float32)
    with pytest.raises(ValueError):
        compose(bg, np.zeros((3, 20, 20), np.float32), np.ones((1, 20, 20), np.float32),
                np.random.default_rng(0))


def test_composite_invariants_on_many_samples():
    for i in range(200):
        s = make_sample(CFG, i)
        off = s.z_g[0] == 0
        np.testing.assert_array_equal(s.x[:, off], s.y_g[:, off])
        np.testing.assert_allclose(s.x, s.z_g * s.fg + (1 - s.z_g) * s.y_g, atol=1e-6)
        assert s.z_g.min() >= 0 and s.z_g.max() <= 1
        assert np.abs(s.x).max() <= 1 and np.abs(s.y_g).max() <= 1


def test_identity_augmentation():
    s = make_sample(CFG, 0)
    a = augment(s, np.random.default_rng(0), CFG)
    for f in ("x", "y_g", "z_g", "fg"):
        np.testing.assert_array_equal(getattr(a, f), getattr(s, f))
    assert a.bbox == s.bbox


def test_double_flip_is_identity():
    cfg = replace(CFG, flip_prob=1.0)
    s = make_sample(CFG, 3)
    twice = augment(augment(s, np.random.default_rng(0), cfg), np.random.default_rng(1), cfg)
    for f in ("x", "y_g", "z_g"):
        np.testing.assert_array_equal(getattr(twice, f), getattr(s, f))
    assert twice.bbox == s.bbox


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 0.3), st.floats(0, 0.3), st.floats(0, 0.3))
def test_augmentation_keeps_invariants(seed, crop, bright, contrast):
    cfg = replace(CFG, flip_prob=0.5, max_crop_frac=crop, brightness=bright, contrast=contrast)
    s = make_sample(cfg, seed)
    assert s.z_g.min() >= 0 and s.z_g.max() <= 1
    off = s.z_g[0] == 0
    np.testing.assert_array_equal(s.x[:, off], s.y_g[:, off])
    np.testing.assert_allclose(s.x, s.z_g * s.fg + (1 - s.z_g) * s.y_g, atol=1e-6)


def test_dataset_files_and_manifest(tmp_path):
    ds = make_dataset(CFG, 8, tmp_path, "train")
    files = sorted(p.name for p in (tmp_path / "train").iterdir())
    assert len([f for f in files if f.endswith(".png")]) == 24
    rows = (tmp_path / "train" / "manifest.csv").read_text().splitlines()
    assert rows[0] == "index,seed,margin,bbox"
    assert len(rows) == 9
    assert len(ds) == 8


def test_roundtrip_quantization(tmp_path):
    ds = make_dataset(CFG, 8, tmp_path, "train")
    back = load_split(tmp_path, "train")
    for a, b, value_range in ((ds.x, back.x, 2.0), (ds.y, back.y, 2.0), (ds.z, back.z, 1.0)):
        assert np.abs(a - b).max() <= value_range / 255 + 1e-6


def test_nonpositive_n_rejected():
    with pytest.raises(ValueError):
        make_dataset(CFG, 0)


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_split(tmp_path, "train")


def test_subset_regenerates_alone():
    full = make_dataset(CFG, 6)
    np.testing.assert_array_equal(make_sample(CFG, 4).x, full.x[4])


def _hashes(arr):
    return {hashlib.sha256(a.tobytes()).hexdigest() for a in arr}


def test_disjoint_seeds_give_disjoint_backgrounds():
    train = make_dataset(replace(CFG, seed=0), 64)
    test = make_dataset(replace(CFG, seed=1_000_003), 32)
    assert not _hashes(train.y) & _hashes(test.y)


def test_dataset_regeneration_hash_identical(tmp_path):
    make_dataset(CFG, 8, tmp_path / "a", "train")
    make_dataset(CFG, 8, tmp_path / "b", "train")
    for p in (tmp_path / "a" / "train").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / "train" / p.name).read_bytes()
