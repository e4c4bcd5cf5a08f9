"""Adaptive density control: clone, split and prune, reported as a list of
structural events so the EMA shadow and optimizer state can follow along."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .scene import GaussianCloud, quat_to_rotmat, sigmoid


@dataclass(frozen=True)
class DensifyConfig:
    interval: int = 1000
    start: int = 500
    grad_threshold: float = 0.0002
    percent_dense: float = 0.01
    min_opacity: float = 0.005
    split_factor: float = 1.6
    n_split: int = 2

    def due(self, iteration: int, total: int) -> bool:
        """True on the densify schedule: every ``interval`` steps, after
        ``start`` and up to half of the run."""
        return iteration > self.start and iteration % self.interval == 0 and iteration <= total // 2


@dataclass(frozen=True)
class Cloned:
    source: int
    new: int


@dataclass(frozen=True)
class Split:
    source: int
    children: tuple


@dataclass(frozen=True)
class Pruned:
    ids: tuple


StructuralEvent = Union[Cloned, Split, Pruned]


class DensifyStats:
    """Running sum of screen-space gradient norms and observation counts."""

    def __init__(self, n: int):
        self.grad_sum = np.zeros(n)
        self.count = np.zeros(n, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.count)

    def accumulate(self, screen_grad, visible) -> None:
        g = np.asarray(screen_grad, dtype=np.float64)
        vis = np.asarray(visible, dtype=bool)
        self.grad_sum[vis] += np.linalg.norm(g[vis], axis=1)
        self.count[vis] += 1

    def mean(self) -> np.ndarray:
        return np.where(self.count > 0, self.grad_sum / np.maximum(self.count, 1), 0.0)


def accumulate_stats(stats: DensifyStats, per_gaussian_screen_grad, visible=None) -> None:
    if visible is None:
        visible = np.ones(len(stats), dtype=bool)
    stats.accumulate(per_gaussian_screen_grad, visible)


def replay_ids(ids, events) -> set:
    """Apply ``events`` to an id set; used to audit densify output."""
    out = set(int(i) for i in ids)
    for ev in events:
        if isinstance(ev, Cloned):
            out.add(ev.new)
        elif isinstance(ev, Split):
            out.discard(ev.source)
            out.update(ev.children)
        else:
            out.difference_update(ev.ids)
    return out


def densify_and_prune(cloud: GaussianCloud, stats: DensifyStats, extent: float,
                      cfg: DensifyConfig = DensifyConfig(), rng=None):
    """Returns (new cloud, events, origin).

    ``origin[i]`` is the pre-pass row that new row ``i`` continues, or -1 for
    rows created by clone/split (their optimizer moments start at zero).
    """
    if len(stats) != cloud.count:
        raise ValueError(f"stats track {len(stats)} gaussians, cloud has {cloud.count}")
    rng = np.random.default_rng(0) if rng is None else rng
    n = cloud.count
    grads = stats.mean()
    cand = grads > cfg.grad_threshold
    max_scale = np.exp(cloud.log_scale.astype(np.float64)).max(axis=1) if n else np.zeros(0)
    small = max_scale < cfg.percent_dense * extent
    clone_rows = np.nonzero(cand & small)[0]
    split_rows = np.nonzero(cand & ~small)[0]

    events: list = []
    next_id = cloud.next_id

    clones = cloud.take(clone_rows)
    clones.ids = np.arange(next_id, next_id + len(clone_rows), dtype=np.int64)
    next_id += len(clone_rows)
    events.extend(Cloned(int(s), int(d)) for s, d in zip(cloud.ids[clone_rows], clones.ids))

    k = cfg.n_split
    children = cloud.take(np.repeat(split_rows, k))
    if len(split_rows):
        dtype = cloud.position.dtype
        s = np.exp(children.log_scale.astype(np.float64))
        R = quat_to_rotmat(children.rotation.astype(np.float64)
                           / np.linalg.norm(children.rotation.astype(np.float64), axis=1, keepdims=True))
        z = rng.standard_normal((len(children.ids), 3))
        offset = np.einsum("nij,nj->ni", R, s * z)
        children.position = (children.position.astype(np.float64) + offset).astype(dtype)
        children.log_scale = (children.log_scale.astype(np.float64) - np.log(cfg.split_factor)).astype(dtype)
    children.ids = np.arange(next_id, next_id + len(children.ids), dtype=np.int64)
    next_id += len(children.ids)
    for j, src in enumerate(cloud.ids[split_rows]):
        events.append(Split(int(src), tuple(int(c) for c in children.ids[j * k:(j + 1) * k])))

    keep = np.ones(n, dtype=bool)
    keep[split_rows] = False
    kept_rows = np.nonzero(keep)[0]
    merged = cloud.take(kept_rows).append(clones).append(children)
    origin = np.concatenate([kept_rows, np.full(len(clone_rows) + len(children.ids), -1)]).astype(np.int64)

    low = merged.opacity < cfg.min_opacity
    if np.any(low):
        events.append(Pruned(tuple(int(i) for i in merged.ids[low])))
        merged = merged.take(np.nonzero(~low)[0])
        origin = origin[~low]
    merged.next_id = next_id
    return merged, events, origin
