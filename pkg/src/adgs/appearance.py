"""Frame-dependent colour transform: per-view and per-gaussian embeddings fed
through a small MLP that predicts a per-channel affine map of the colour."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

PARAM_NAMES = ("view_embeds", "W1", "b1", "W2", "b2", "W3", "b3")


class UnknownView(KeyError):
    pass


class MissingForwardState(RuntimeError):
    pass


@dataclass
class AppearanceCache:
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    out: np.ndarray
    c: np.ndarray
    view: int
    n_p: int


class AppearanceModel:
    """Three fully connected layers with ReLU; the last layer starts at zero so
    the transform is the identity (a = 1, b = 0) before any update."""

    def __init__(self, n_views: int, gaussian_dim: int = 24, view_dim: int = 32, hidden: int = 32,
                 seed: int = 0, use_color_input: bool = True, dtype=np.float32):
        self.n_views = n_views
        self.gaussian_dim = gaussian_dim
        self.view_dim = view_dim
        self.hidden = hidden
        self.use_color_input = use_color_input
        rng = np.random.default_rng(seed)
        d_in = gaussian_dim + view_dim + (3 if use_color_input else 0)
        self.params = {
            "view_embeds": rng.normal(0.0, 0.1, (n_views, view_dim)),
            "W1": rng.normal(0.0, np.sqrt(2.0 / d_in), (d_in, hidden)),
            "b1": np.zeros(hidden),
            "W2": rng.normal(0.0, np.sqrt(2.0 / hidden), (hidden, hidden)),
            "b2": np.zeros(hidden),
            "W3": np.zeros((hidden, 6)),
            "b3": np.zeros(6),
        }
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}

    def _input(self, p, view, c):
        if not 0 <= view < self.n_views:
            raise UnknownView(view)
        q = np.broadcast_to(self.params["view_embeds"][view].astype(np.float64), (len(p), self.view_dim))
        parts = [np.asarray(p, dtype=np.float64), q]
        if self.use_color_input:
            parts.append(c)
        return np.concatenate(parts, axis=1)

    def forward(self, p, view: int, c) -> tuple[np.ndarray, AppearanceCache]:
        c = np.asarray(c, dtype=np.float64)
        P = {k: v.astype(np.float64) for k, v in self.params.items()}
        x = self._input(p, view, c)
        h1 = np.maximum(x @ P["W1"] + P["b1"], 0.0)
        h2 = np.maximum(h1 @ P["W2"] + P["b2"], 0.0)
        out = h2 @ P["W3"] + P["b3"]
        ct = (1.0 + out[:, :3]) * c + out[:, 3:]
        return ct, AppearanceCache(x, h1, h2, out, c, view, np.shape(p)[1])

    def backward(self, cache: Optional[AppearanceCache], grad_ct):
        """Returns (grad_p, grad_c, param_grads)."""
        if cache is None:
            raise MissingForwardState("appearance backward without a paired forward")
        P = {k: v.astype(np.float64) for k, v in self.params.items()}
        g = np.asarray(grad_ct, dtype=np.float64)
        g_out = np.concatenate([g * cache.c, g], axis=1)
        g_c = g * (1.0 + cache.out[:, :3])
        grads = {"W3": cache.h2.T @ g_out, "b3": g_out.sum(axis=0)}
        g_h2 = (g_out @ P["W3"].T) * (cache.h2 > 0)
        grads["W2"] = cache.h1.T @ g_h2
        grads["b2"] = g_h2.sum(axis=0)
        g_h1 = (g_h2 @ P["W2"].T) * (cache.h1 > 0)
        grads["W1"] = cache.x.T @ g_h1
        grads["b1"] = g_h1.sum(axis=0)
        g_x = g_h1 @ P["W1"].T
        n_p = cache.n_p
        g_p = g_x[:, :n_p]
        g_views = np.zeros(self.params["view_embeds"].shape)
        g_views[cache.view] = g_x[:, n_p:n_p + self.view_dim].sum(axis=0)
        grads["view_embeds"] = g_views
        if self.use_color_input:
            g_c = g_c + g_x[:, n_p + self.view_dim:]
        return g_p, g_c, grads

    def state(self) -> dict:
        return dict(self.params)

    def load_state(self, params: dict) -> None:
        for k in PARAM_NAMES:
            self.params[k] = np.array(params[k])


def transform_color(model: AppearanceModel, p_i, view: int, c_ij) -> np.ndarray:
    """Colour of a single gaussian under view ``view``."""
    ct, _ = model.forward(np.asarray(p_i, dtype=np.float64).reshape(1, -1), view,
                          np.asarray(c_ij, dtype=np.float64).reshape(1, 3))
    return ct[0]
