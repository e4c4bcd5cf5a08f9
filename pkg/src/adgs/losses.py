"""Training objectives and image metrics, with analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

WINDOW = 11
SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2
PSNR_CAP = 100.0


class ShapeMismatch(ValueError):
    pass


class TooSmall(ValueError):
    pass


@dataclass
class LossWeights:
    lambda_dssim: float = 0.2
    lambda_m: float = 0.1
    lambda_mask: float = 1.0

    def __post_init__(self):
        if min(self.lambda_dssim, self.lambda_m, self.lambda_mask) < 0:
            raise ValueError("loss weights must be non-negative")


def _check(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"{np.shape(a)} vs {np.shape(b)}")


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


_G = gaussian_window()


def _filter_valid(img):
    """Separable 'valid' Gaussian filter over the first two axes of (H, W, C)."""
    a = sliding_window_view(img, WINDOW, axis=0) @ _G
    return sliding_window_view(a, WINDOW, axis=1) @ _G


def _filter_adjoint(grad):
    """Adjoint of :func:`_filter_valid`: full correlation with the same window."""
    p = WINDOW - 1
    padded = np.pad(grad, ((p, p), (p, p), (0, 0)))
    return _filter_valid(padded)


def _as3(img):
    img = np.asarray(img, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


def _ssim_parts(x, y):
    mx, my = _filter_valid(x), _filter_valid(y)
    exx, eyy, exy = _filter_valid(x * x), _filter_valid(y * y), _filter_valid(x * y)
    vx, vy, cxy = exx - mx * mx, eyy - my * my, exy - mx * my
    A1 = 2 * mx * my + C1
    A2 = 2 * cxy + C2
    B1 = mx * mx + my * my + C1
    B2 = vx + vy + C2
    return mx, my, A1, A2, B1, B2


def ssim(x, y) -> float:
    """Mean SSIM over all full 11x11 windows and channels."""
    _check(x, y)
    x, y = _as3(x), _as3(y)
    if min(x.shape[:2]) < WINDOW:
        raise TooSmall(f"image {x.shape[:2]} smaller than the {WINDOW}x{WINDOW} window")
    _, _, A1, A2, B1, B2 = _ssim_parts(x, y)
    return float(np.mean(A1 * A2 / (B1 * B2)))


def ssim_with_grad(x, y):
    """SSIM(x, y) and its gradient w.r.t. x."""
    _check(x, y)
    x, y = _as3(x), _as3(y)
    if min(x.shape[:2]) < WINDOW:
        raise TooSmall(f"image {x.shape[:2]} smaller than the {WINDOW}x{WINDOW} window")
    mx, my, A1, A2, B1, B2 = _ssim_parts(x, y)
    S = A1 * A2 / (B1 * B2)
    n = S.size
    g_S = np.full(S.shape, 1.0 / n)
    # partials w.r.t. the local statistics mu_x, E[x^2], E[xy]
    g_A1 = g_S * A2 / (B1 * B2)
    g_A2 = g_S * A1 / (B1 * B2)
    g_B1 = -g_S * S / B1
    g_B2 = -g_S * S / B2
    g_mx = g_A1 * 2 * my + g_A2 * (-2 * my) + g_B1 * 2 * mx + g_B2 * (-2 * mx)
    g_exx = g_B2
    g_exy = 2 * g_A2
    grad = _filter_adjoint(g_mx) + 2 * x * _filter_adjoint(g_exx) + y * _filter_adjoint(g_exy)
    return float(S.mean()), grad


def masked_recon_loss(pred, gt, mask, weights: LossWeights = LossWeights()):
    """lambda * DSSIM(M*pred, M*gt) + (1 - lambda) * mean|M*pred - M*gt|.

    Returns (loss, dloss/dpred). ``mask`` is (H, W) and treated as constant.
    """
    _check(pred, gt)
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != pred.shape[:2]:
        raise ShapeMismatch(f"mask {m.shape} vs image {pred.shape[:2]}")
    m3 = m[..., None] if pred.ndim == 3 else m
    mp, mg = m3 * pred, m3 * gt
    lam = weights.lambda_dssim
    diff = mp - mg
    l1 = float(np.mean(np.abs(diff)))
    g_mp = (1 - lam) * np.sign(diff) / diff.size
    loss = (1 - lam) * l1
    if lam > 0:
        s, g_s = ssim_with_grad(mp, mg)
        loss += lam * (1.0 - s) / 2.0
        g_mp = g_mp - lam * 0.5 * g_s.reshape(g_mp.shape)
    return loss, m3 * g_mp


def l1_with_grads(a, b):
    """mean|a - b| and its gradients w.r.t. a and b."""
    _check(a, b)
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    g = np.sign(d) / d.size
    return float(np.mean(np.abs(d))), g, -g


STOP_GRAD = ("none", "a", "b")


def mutual_consistency_loss(render_a, render_b, stop_grad: str = "none"):
    """L1 between two frame-independent renders.

    Returns (loss, grad_a, grad_b); ``stop_grad`` zeroes the gradient of one side.
    """
    if stop_grad not in STOP_GRAD:
        raise ValueError(f"stop_grad must be one of {STOP_GRAD}, got {stop_grad!r}")
    loss, ga, gb = l1_with_grads(render_a, render_b)
    if stop_grad == "a":
        ga = np.zeros_like(ga)
    elif stop_grad == "b":
        gb = np.zeros_like(gb)
    return loss, ga, gb


def mask_loss(soft_mask, target_map):
    loss, g, _ = l1_with_grads(soft_mask, target_map)
    return loss, g


def total_loss(parts: dict, weights: LossWeights, mode: str, warmup: bool) -> float:
    """Weighted objective. ``parts`` keys: r1, r2, m1, m2, me, mask (missing = 0)."""
    p = {k: float(parts.get(k, 0.0)) for k in ("r1", "r2", "m1", "m2", "me", "mask")}
    lam_m = 0.0 if warmup else weights.lambda_m
    if mode == "gs-gs":
        return p["r1"] + p["r2"] + lam_m * (p["m1"] + p["m2"]) + weights.lambda_mask * p["mask"]
    return p["r1"] + lam_m * p["me"] + weights.lambda_mask * p["mask"]


def psnr(pred, gt) -> float:
    _check(pred, gt)
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))
