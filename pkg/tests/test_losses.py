import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adgs.losses import (LossWeights, ShapeMismatch, TooSmall, mask_loss, masked_recon_loss,
                         mutual_consistency_loss, psnr, ssim, ssim_with_grad, total_loss)


def ssim_double_loop(x, y, size=11, sigma=1.5):
    """Windowed SSIM written out pixel by pixel."""
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-ax ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    x = x.reshape(x.shape[0], x.shape[1], -1)
    y = y.reshape(y.shape[0], y.shape[1], -1)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for ch in range(x.shape[2]):
        for i in range(x.shape[0] - size + 1):
            for j in range(x.shape[1] - size + 1):
                a = x[i:i + size, j:j + size, ch]
                b = y[i:i + size, j:j + size, ch]
                ma, mb = np.sum(w * a), np.sum(w * b)
                va = np.sum(w * (a - ma) ** 2)
                vb = np.sum(w * (b - mb) ** 2)
                cov = np.sum(w * (a - ma) * (b - mb))
                vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


# ------------------------------------------------------------------ SSIM


def test_ssim_of_identical_and_equal_constant_images(rng):
    x = rng.uniform(0, 1, (16, 16, 3))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    half = np.full((16, 16, 3), 0.5)
    assert ssim(half, half) == pytest.approx(1.0, abs=1e-12)


def test_ssim_matches_double_loop(rng):
    x, y = rng.uniform(0, 1, (16, 16, 3)), rng.uniform(0, 1, (16, 16, 3))
    assert ssim(x, y) == pytest.approx(ssim_double_loop(x, y), abs=1e-6)
    g = np.clip(x + rng.normal(0, 0.05, x.shape), 0, 1)
    assert ssim(x, g) == pytest.approx(ssim_double_loop(x, g), abs=1e-6)


def test_ssim_is_symmetric_and_bounded(rng):
    for _ in range(5):
        x, y = rng.uniform(0, 1, (13, 14, 3)), rng.uniform(0, 1, (13, 14, 3))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-14)
        assert -1 <= ssim(x, y) <= 1


def test_ssim_gradient_matches_finite_differences(rng):
    x, y = rng.uniform(0, 1, (12, 13, 3)), rng.uniform(0, 1, (12, 13, 3))
    _, g = ssim_with_grad(x, y)
    h = 1e-6
    for _ in range(15):
        idx = tuple(rng.integers(0, s) for s in x.shape)
        old = x[idx]
        x[idx] = old + h
        sp = ssim(x, y)
        x[idx] = old - h
        sm = ssim(x, y)
        x[idx] = old
        assert g[idx] == pytest.approx((sp - sm) / (2 * h), rel=1e-5, abs=1e-10)


def test_ssim_rejects_small_or_mismatched_images():
    with pytest.raises(TooSmall):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))
    with pytest.raises(ShapeMismatch):
        ssim(np.zeros((12, 12, 3)), np.zeros((12, 13, 3)))


# ------------------------------------------------------- reconstruction loss


def test_recon_loss_zero_for_identical_images(rng):
    x = rng.uniform(0, 1, (12, 12, 3))
    loss, _ = masked_recon_loss(x, x, rng.uniform(0, 1, (12, 12)))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_fully_masked_loss_and_gradient_vanish(rng):
    x, y = rng.uniform(0, 1, (12, 12, 3)), rng.uniform(0, 1, (12, 12, 3))
    loss, g = masked_recon_loss(x, y, np.zeros((12, 12)))
    assert loss == 0.0
    assert not g.any()


def test_recon_loss_matches_reference(rng):
    # the smallest image with a full SSIM window; 8x8 inputs are rejected
    x, y = rng.uniform(0, 1, (12, 12, 3)), rng.uniform(0, 1, (12, 12, 3))
    loss, _ = masked_recon_loss(x, y, np.ones((12, 12)), LossWeights(lambda_dssim=0.2))
    ref = 0.8 * np.mean(np.abs(x - y)) + 0.2 * (1 - ssim_double_loop(x, y)) / 2
    assert loss == pytest.approx(ref, abs=1e-6)
    with pytest.raises(TooSmall):
        masked_recon_loss(x[:8, :8], y[:8, :8], np.ones((8, 8)))


def test_recon_loss_gradient_with_soft_mask(rng):
    x, y = rng.uniform(0, 1, (12, 14, 3)), rng.uniform(0, 1, (12, 14, 3))
    mask = rng.uniform(0, 1, (12, 14))
    _, g = masked_recon_loss(x, y, mask)
    h = 1e-7
    for _ in range(15):
        idx = tuple(rng.integers(0, s) for s in x.shape)
        old = x[idx]
        x[idx] = old + h
        lp, _ = masked_recon_loss(x, y, mask)
        x[idx] = old - h
        lm, _ = masked_recon_loss(x, y, mask)
        x[idx] = old
        assert g[idx] == pytest.approx((lp - lm) / (2 * h), rel=1e-5, abs=1e-10)


def test_recon_loss_pure_l1_when_dssim_weight_is_zero(rng):
    x, y = rng.uniform(0, 1, (4, 5, 3)), rng.uniform(0, 1, (4, 5, 3))
    loss, _ = masked_recon_loss(x, y, np.ones((4, 5)), LossWeights(lambda_dssim=0.0))
    assert loss == pytest.approx(np.mean(np.abs(x - y)))


def test_mask_shape_is_checked():
    with pytest.raises(ShapeMismatch):
        masked_recon_loss(np.zeros((12, 12, 3)), np.zeros((12, 12, 3)), np.ones((12, 11)))


# --------------------------------------------------------- consistency/mask


def test_consistency_examples(rng):
    a = rng.uniform(0, 1, (6, 6, 3))
    assert mutual_consistency_loss(a, a)[0] == 0.0
    loss, ga, gb = mutual_consistency_loss(np.full((4, 4, 3), 0.25), np.full((4, 4, 3), 0.75))
    assert loss == 0.5
    np.testing.assert_array_equal(ga, -gb)
    b = rng.uniform(0, 1, (6, 6, 3))
    expected = sum(abs(p - q) for p, q in zip(a.ravel(), b.ravel())) / a.size
    assert mutual_consistency_loss(a, b)[0] == pytest.approx(expected, rel=1e-12)


def test_consistency_stop_gradient(rng):
    a, b = rng.uniform(0, 1, (4, 4, 3)), rng.uniform(0, 1, (4, 4, 3))
    full = mutual_consistency_loss(a, b)
    _, ga, gb = mutual_consistency_loss(a, b, "a")
    assert not ga.any() and np.array_equal(gb, full[2])
    _, ga, gb = mutual_consistency_loss(a, b, "b")
    assert not gb.any() and np.array_equal(ga, full[1])
    with pytest.raises(ValueError):
        mutual_consistency_loss(a, b, "both")


def test_mask_loss_examples(rng):
    t = rng.uniform(0, 1, (5, 5))
    assert mask_loss(t, t)[0] == 0.0
    assert mask_loss(np.ones((5, 5)), np.full((5, 5), 0.5))[0] == 0.5
    s = rng.uniform(0, 1, (5, 5))
    loss, g = mask_loss(s, t)
    assert loss == pytest.approx(np.abs(s - t).sum() / 25)
    np.testing.assert_array_equal(g, np.sign(s - t) / 25)


# ------------------------------------------------------------- total, PSNR


def test_total_loss_weighting_and_warmup_gating():
    w = LossWeights(0.2, 0.1, 1.0)
    parts = {"r1": 1, "r2": 1, "m1": 0.5, "m2": 0.5, "mask": 0.2}
    assert total_loss({}, w, "gs-gs", False) == 0.0
    assert total_loss(parts, w, "gs-gs", False) == pytest.approx(2.3)
    assert total_loss(parts, w, "gs-gs", True) == pytest.approx(2.2)
    assert total_loss({"r1": 1, "me": 0.5, "mask": 0.2}, w, "ema-gs", False) == pytest.approx(1.25)
    assert total_loss({"r1": 1, "me": 0.5, "mask": 0.2}, w, "ema-gs", True) == pytest.approx(1.2)


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(lambda_m=-0.1)


def test_psnr_examples(rng):
    x = rng.uniform(0, 0.8, (8, 8, 3))
    assert psnr(x, x) == 100.0
    assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-9)
    y = rng.uniform(0, 1, (8, 8, 3))
    assert psnr(x, y) == pytest.approx(-10 * np.log10(np.mean((x - y) ** 2)), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 0.5))
def test_psnr_monotone_in_offset(d):
    gt = np.full((4, 4, 3), 0.25)
    assert psnr(gt + d, gt) > psnr(gt + 1.01 * d, gt)
