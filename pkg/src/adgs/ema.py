"""Training-free moving-average shadow of a Gaussian cloud that follows the
trainable cloud through clone, split and prune."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .densify import Cloned, Pruned, Split
from .rasterizer import FilterConfig, rasterize
from .scene import Camera, GaussianCloud

BLENDED = ("position", "log_scale", "rotation", "opacity_logit", "sh_coeffs")


class CorrespondenceBroken(RuntimeError):
    pass


class UnknownId(KeyError):
    pass


class EmaState:
    """Shadow cloud ``shadow`` with the same ids, in the same row order, as the
    trainable cloud it is paired with."""

    def __init__(self, cloud: GaussianCloud, beta: float = 0.8, include_embed: bool = True):
        if not 0.0 < beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {beta}")
        self.beta = beta
        self.include_embed = include_embed
        self.shadow = cloud.copy()

    @property
    def attrs(self) -> tuple:
        return BLENDED + (("appearance_embed",) if self.include_embed else ())

    def step(self, cloud: GaussianCloud) -> None:
        """a_ema <- beta * a_ema + (1 - beta) * a_train, element-wise."""
        sh = self.shadow
        if sh.count != cloud.count or not np.array_equal(sh.ids, cloud.ids):
            raise CorrespondenceBroken(f"shadow has {sh.count} gaussians, trainable cloud {cloud.count}")
        b = self.beta
        for name in self.attrs:
            a = getattr(sh, name)
            t = getattr(cloud, name).astype(np.float64)
            cur = a.astype(np.float64)
            if name == "rotation":
                # q and -q are the same rotation; blend on the trainable side's hemisphere
                sign = np.where(np.sum(cur * t, axis=1, keepdims=True) < 0, -1.0, 1.0)
                cur = cur * sign
            blended = b * cur + (1.0 - b) * t
            if name == "rotation":
                norm = np.linalg.norm(blended, axis=1, keepdims=True)
                blended = np.where(norm > 0, blended / np.where(norm > 0, norm, 1.0), t)
            a[...] = blended
        sh.sampling_rate[...] = cloud.sampling_rate

    def apply_structural_events(self, events: Iterable, cloud: GaussianCloud) -> None:
        """Replay densify events on the shadow, then match the row order of ``cloud``."""
        sh = self.shadow
        for ev in events:
            if isinstance(ev, Cloned):
                row = self._row(sh, [ev.source])
                dup = sh.take(row)
                dup.ids = np.array([ev.new], dtype=np.int64)
                sh = sh.append(dup)
            elif isinstance(ev, Split):
                parent = self._row(sh, [ev.source])
                kids = sh.take(np.repeat(parent, len(ev.children)))
                kids.ids = np.array(ev.children, dtype=np.int64)
                # children pruned later in the same pass are gone from ``cloud``;
                # they keep the parent's values until their Pruned event
                alive = np.isin(kids.ids, cloud.ids)
                if np.any(alive):
                    src = cloud.take(self._row(cloud, kids.ids[alive]))
                    for name in ("position", "log_scale", "rotation", "sampling_rate"):
                        getattr(kids, name)[alive] = getattr(src, name)
                keep = sh.ids != ev.source
                sh = sh.take(np.nonzero(keep)[0]).append(kids)
            elif isinstance(ev, Pruned):
                self._row(sh, ev.ids)
                sh = sh.take(np.nonzero(~np.isin(sh.ids, np.asarray(ev.ids, dtype=np.int64)))[0])
            else:
                raise TypeError(f"unknown structural event {ev!r}")
        if set(sh.ids.tolist()) != set(cloud.ids.tolist()):
            raise CorrespondenceBroken("shadow ids differ from trainable ids after events")
        self.shadow = sh.take(sh.index_of(cloud.ids))
        self.shadow.next_id = cloud.next_id

    @staticmethod
    def _row(cloud: GaussianCloud, ids) -> np.ndarray:
        try:
            return cloud.index_of(np.asarray(ids, dtype=np.int64).reshape(-1))
        except KeyError as exc:
            raise UnknownId(str(exc)) from None

    def render(self, camera: Camera, *, sh_degree: int = 3, filters: FilterConfig = FilterConfig()):
        """Frame-independent render of the shadow. Nothing here is differentiated."""
        return rasterize(self.shadow, camera, None, sh_degree=sh_degree, filters=filters)


def ema_step(state: EmaState, cloud: GaussianCloud) -> None:
    state.step(cloud)


def apply_structural_events(state: EmaState, events, cloud: GaussianCloud) -> None:
    state.apply_structural_events(events, cloud)


def render_ema(state: EmaState, camera: Camera, **kw) -> np.ndarray:
    return state.render(camera, **kw).clamped
