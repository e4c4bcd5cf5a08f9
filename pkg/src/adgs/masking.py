"""Distractor masks: the multi-cue hard mask, the learnable soft mask and
the schedule deciding which one supervises a given reconstruction."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .tensorio import read_tensor, write_tensor

log = logging.getLogger(__name__)

FEATURE_DIM = 12
MATCH_THRESHOLD = 3
STATIC_DENSITY_RATIO = 0.1


class MissingCues(ValueError):
    pass


class UnknownView(KeyError):
    pass


@dataclass
class CueBundle:
    feature_map: Optional[np.ndarray]         # (h, w, d) features of the ground-truth image
    segment_map: Optional[np.ndarray]         # (H, W) integer labels from 0
    correspondence_map: Optional[np.ndarray]  # (H, W) match counts

    @property
    def complete(self) -> bool:
        return all(v is not None for v in (self.feature_map, self.segment_map, self.correspondence_map))

    @property
    def stride(self) -> int:
        return self.segment_map.shape[0] // self.feature_map.shape[0]

    def save(self, directory, view: str) -> None:
        d = Path(directory)
        write_tensor(d / f"{view}.feat.ten", self.feature_map)
        write_tensor(d / f"{view}.seg.ten", self.segment_map.astype(np.float32))
        write_tensor(d / f"{view}.corr.ten", self.correspondence_map.astype(np.float32))

    @classmethod
    def load(cls, directory, view: str) -> "CueBundle":
        d = Path(directory)

        def opt(suffix):
            p = d / f"{view}.{suffix}.ten"
            return read_tensor(p) if p.exists() else None

        seg = opt("seg")
        return cls(opt("feat"), None if seg is None else np.rint(seg).astype(np.int64), opt("corr"))


def luminance(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def builtin_feature_embed(image, stride: int = 4) -> np.ndarray:
    """Hand-crafted 12-d descriptor per stride x stride cell.

    Channels: mean RGB, RGB std, 4-bin gradient orientation histogram
    (magnitude weighted, bins centred on 0, 45, 90, 135 degrees), mean gradient
    magnitude, luminance entropy in bits over 8 bins.
    """
    img = np.asarray(image, dtype=np.float64)
    H, W = img.shape[:2]
    if H % stride or W % stride:
        raise ValueError(f"stride {stride} does not divide image size {H}x{W}")
    h, w = H // stride, W // stride

    def cells(a):
        return a.reshape(h, stride, w, stride, *a.shape[2:]).swapaxes(1, 2).reshape(h, w, stride * stride, *a.shape[2:])

    c = cells(img)
    mean = c.mean(axis=2)
    std = (c - c[:, :, :1]).std(axis=2)  # shift keeps constant cells exactly zero

    lum = luminance(img)
    gy, gx = np.gradient(lum)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.floor((theta + np.pi / 8) / (np.pi / 4)).astype(np.int64) % 4
    hist = np.stack([cells(np.where(bins == b, mag, 0.0)).sum(axis=2) for b in range(4)], axis=-1)
    mean_mag = cells(mag).mean(axis=2)

    lbin = np.clip(np.floor(lum * 8).astype(np.int64), 0, 7)
    counts = np.stack([(cells(lbin) == b).sum(axis=2) for b in range(8)], axis=-1).astype(np.float64)
    p = counts / (stride * stride)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.sum(np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0), axis=-1)
    ent = np.abs(ent)  # keep -0.0 out of the descriptor
    return np.concatenate([mean, std, hist, mean_mag[..., None], ent[..., None]], axis=-1)


def cosine_similarity_grid(a, b) -> np.ndarray:
    """Per-cell cosine similarity; cells where either vector is zero give 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"feature grids differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    ok = (na > 0) & (nb > 0)
    if not np.all(ok):
        log.debug("%d zero feature cells, similarity set to 0", int((~ok).sum()))
    return np.where(ok, np.sum(a * b, axis=-1) / np.where(ok, na * nb, 1.0), 0.0)


def bilinear_upsample(grid, height: int, width: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize with edge clamping."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape

    def axis(n_out, n_in):
        src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(height, h)
    x0, x1, fx = axis(width, w)
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x1] * fx
    bot = grid[y1][:, x0] * (1 - fx) + grid[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def nearest_upsample(grid, stride: int) -> np.ndarray:
    return np.repeat(np.repeat(np.asarray(grid), stride, axis=0), stride, axis=1)


def cosine_target_map(gt_features, render_features, height: int, width: int) -> np.ndarray:
    return bilinear_upsample(cosine_similarity_grid(gt_features, render_features), height, width)


def compute_hard_mask(render, gt, cues: CueBundle,
                      feature_embedder: Callable[..., np.ndarray] = builtin_feature_embed) -> np.ndarray:
    """Binary mask, 1 = static, from pixel/feature residuals, segments and matches."""
    if not cues.complete:
        raise MissingCues("feature, segment and correspondence maps are all required")
    render = np.asarray(render, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    stride = cues.stride
    e_pix = np.abs(render - gt).sum(axis=-1)
    f_render = feature_embedder(render, stride)
    e_feat = nearest_upsample(1.0 - cosine_similarity_grid(f_render, cues.feature_map), stride)
    static = (cues.correspondence_map >= MATCH_THRESHOLD).astype(np.float64)

    labels = cues.segment_map.ravel()
    n_lab = int(labels.max()) + 1
    area = np.bincount(labels, minlength=n_lab).astype(np.float64)
    present = area > 0
    area_safe = np.where(present, area, 1.0)
    pix_k = np.bincount(labels, weights=e_pix.ravel(), minlength=n_lab) / area_safe
    feat_k = np.bincount(labels, weights=e_feat.ravel(), minlength=n_lab) / area_safe
    s_k = np.bincount(labels, weights=static.ravel(), minlength=n_lab) / area_safe
    marked = present & (pix_k > e_pix.mean()) & (feat_k > e_feat.mean()) & (s_k < STATIC_DENSITY_RATIO * static.mean())
    return (~marked[cues.segment_map]).astype(np.float32)


class SoftMaskStore:
    """One learnable [0, 1] grid per training view, initialized to ones."""

    def __init__(self, n_views: int, height: int, width: int, lr: float = 0.1):
        self.lr = lr
        self.masks = np.ones((n_views, height, width), dtype=np.float32)

    def __getitem__(self, view: int) -> np.ndarray:
        if not 0 <= view < len(self.masks):
            raise UnknownView(view)
        return self.masks[view]

    def step(self, view: int, target_map, scale: float = 1.0) -> np.ndarray:
        """One sign-gradient step on |mask - target|, then clamp to [0, 1]."""
        m = self[view].astype(np.float64)
        m = np.clip(m - self.lr * scale * np.sign(m - target_map), 0.0, 1.0)
        self.masks[view] = m
        return self.masks[view]


MASK_MODES = ("hs", "hard", "soft", "none")


def select_mask(iteration: int, mode: str, masks: str = "hs"):
    """Which mask feeds the reconstruction loss.

    gs-gs returns a (model 1, model 2) pair; single and ema-gs return one name.
    Names are "hard", "soft" or "none".
    """
    if masks not in MASK_MODES:
        raise ValueError(f"unknown mask config {masks!r}")
    if mode == "gs-gs":
        if masks == "hs":
            return ("hard", "soft")
        return (masks, masks)
    if mode not in ("single", "ema-gs"):
        raise ValueError(f"unknown mode {mode!r}")
    if masks == "hs":
        return "hard" if iteration % 2 == 0 else "soft"
    return masks
