import hashlib
import json

import numpy as np
import pytest

from adgs.synthdata import (InfeasibleRatio, SynthSceneSpec, generate_dataset, inject_distractors, load_dataset,
                            oracle_cloud, quantize, segment_map)
from adgs.rasterizer import rasterize
from adgs.tensorio import read_tensor

from conftest import TINY_SPEC


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_zero_ratio_leaves_image_untouched(rng):
    img = rng.uniform(0, 1, (16, 16, 3))
    out, mask, inst = inject_distractors(img, 0.0, rng)
    assert np.array_equal(out, img)
    assert np.all(mask == 1) and np.all(inst == -1)


@pytest.mark.parametrize("ratio", [0.05, 0.2, 0.35, 0.5])
def test_corrupted_fraction_and_untouched_pixels(ratio, rng):
    img = rng.uniform(0, 1, (64, 64, 3))
    out, mask, inst = inject_distractors(img, ratio, rng)
    frac = 1 - mask.mean()
    assert ratio - 0.03 <= frac <= ratio + 0.03
    keep = mask == 1
    assert np.array_equal(out[keep], img[keep])
    np.testing.assert_array_equal(inst >= 0, ~keep)


def test_rectangle_bookkeeping_and_overlap_union():
    # scripted draws: two 11x11 squares whose corners overlap in a 6x6 block
    class Scripted:
        def __init__(self, values):
            self.values = list(values)

        def uniform(self, lo=0.0, hi=1.0, size=None):
            if size is not None:
                return np.full(size, 0.5)
            return self.values.pop(0)

        def random(self):
            return 0.9  # rectangle

    H = W = 40
    # centre y, centre x, half-height/H, half-width/W (radius 5 on each axis -> 11x11 incl. edges)
    draws = [10.0, 10.0, 5 / H, 5 / W, 15.0, 15.0, 5 / H, 5 / W]
    img = np.zeros((H, W, 3))
    _, mask, inst = inject_distractors(img, 0.15, Scripted(draws))
    # the later shape paints over the earlier one
    assert (inst == 1).sum() == 11 * 11 and (inst == 0).sum() == 11 * 11 - 6 * 6
    assert (mask == 0).sum() == 11 * 11 * 2 - 6 * 6


def test_unreachable_ratio_raises(rng):
    with pytest.raises(InfeasibleRatio):
        inject_distractors(np.zeros((2, 2, 3)), 0.3, rng, max_attempts=20)


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSceneSpec(distractor_ratio=0.6)
    with pytest.raises(ValueError):
        SynthSceneSpec(lighting="sunset")
    with pytest.raises(ValueError):
        SynthSceneSpec(width=30, feature_stride=4)


def test_segments_are_contiguous_and_split_instances(rng):
    inst = np.full((16, 16), -1)
    inst[2:5, 2:5] = 0
    inst[10:14, 6:9] = 1
    seg = segment_map(inst)
    labels = np.unique(seg)
    np.testing.assert_array_equal(labels, np.arange(len(labels)))
    assert len(labels) == 16 + 2
    assert len(np.unique(seg[inst == 0])) == 1 and len(np.unique(seg[inst == 1])) == 1
    assert not np.isin(seg[inst == 0], seg[inst == -1]).any()


def test_generated_dataset_layout_and_masks(tiny_dataset):
    data = load_dataset(tiny_dataset)
    spec = data.spec()
    assert spec == SynthSceneSpec(**TINY_SPEC)
    assert data.train_images.shape == (6, 32, 32, 3) and data.test_images.shape == (2, 32, 32, 3)
    meta = json.loads((tiny_dataset / "meta.json").read_text())
    for v, frac in enumerate(meta["corrupted_fraction"]):
        assert 0.17 <= frac <= 0.23
        assert 1 - data.gt_masks[v].mean() == pytest.approx(frac)
    assert read_tensor(tiny_dataset / "init_points.ten").shape == (12 * 2, 6)
    for v in range(6):
        cues = data.cues(v)
        assert cues.complete and cues.feature_map.shape == (8, 8, 12)
        assert np.all(cues.correspondence_map[data.gt_masks[v] == 0] == 0)
        assert cues.correspondence_map.max() <= 6


def test_static_pixels_match_clean_render(tiny_dataset):
    data = load_dataset(tiny_dataset)
    oracle = oracle_cloud(data.spec())
    for v, cam in enumerate(data.train_cameras):
        clean = quantize(rasterize(oracle, cam).clamped)
        static = data.gt_masks[v] == 1
        got = np.rint(data.train_images[v] * 255).astype(np.uint8)
        assert np.array_equal(got[static], clean[static])
        assert np.any(got[~static] != clean[~static])
    for v, cam in enumerate(data.test_cameras):
        assert np.array_equal(np.rint(data.test_images[v] * 255).astype(np.uint8),
                              quantize(rasterize(oracle, cam).clamped))


def test_clean_identity_dataset_equals_renders(tmp_path):
    spec = SynthSceneSpec(**{**TINY_SPEC, "distractor_ratio": 0.0, "n_train_views": 3})
    generate_dataset(spec, tmp_path)
    data = load_dataset(tmp_path)
    oracle = oracle_cloud(spec)
    assert np.all(data.gt_masks == 1)
    for v, cam in enumerate(data.train_cameras):
        assert np.array_equal(np.rint(data.train_images[v] * 255).astype(np.uint8),
                              quantize(rasterize(oracle, cam).clamped))


def test_affine_lighting_only_touches_training_views(tmp_path):
    spec = SynthSceneSpec(**{**TINY_SPEC, "distractor_ratio": 0.0, "lighting": "affine", "n_train_views": 3})
    generate_dataset(spec, tmp_path)
    data = load_dataset(tmp_path)
    meta = data.meta
    gains = np.array(meta["lighting_gain"])
    assert np.all((gains >= 0.7) & (gains <= 1.3))
    assert np.all(np.abs(meta["lighting_offset"]) <= 0.1)
    oracle = oracle_cloud(spec)
    cam = data.train_cameras[0]
    lit = np.clip(rasterize(oracle, cam).clamped * gains[0] + meta["lighting_offset"][0], 0, 1)
    assert np.array_equal(np.rint(data.train_images[0] * 255).astype(np.uint8), quantize(lit))


def test_regeneration_is_byte_identical(tiny_dataset, tmp_path):
    generate_dataset(SynthSceneSpec(**TINY_SPEC), tmp_path)
    assert tree_digest(tmp_path) == tree_digest(tiny_dataset)


def test_near_plane_scales_with_extent(tiny_dataset):
    data = load_dataset(tiny_dataset)
    assert all(c.near == pytest.approx(0.01 * data.extent) for c in data.train_cameras + data.test_cameras)
