"""Adaptive-moment optimizer with per-group learning rates and the
log-linear position schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NaNGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class LearningRates:
    position_init: float = 0.00016
    position_final: float = 0.0000016
    position_delay_mult: float = 0.01
    position_delay_steps: int = 0
    feature: float = 0.0025
    feature_rest_div: float = 20.0
    opacity: float = 0.1
    scaling: float = 0.005
    rotation: float = 0.001
    embed: float = 0.005
    view_embed: float = 0.001
    mlp: float = 0.0005


def position_lr(iteration: int, total: int, rates: LearningRates, extent: float = 1.0) -> float:
    """Log-linear decay from init to final over ``total`` steps, with an
    optional sine ramp from ``delay_mult`` over the first ``delay_steps``."""
    lr0 = rates.position_init * extent
    lr1 = rates.position_final * extent
    if rates.position_delay_steps > 0:
        ramp = rates.position_delay_mult + (1 - rates.position_delay_mult) * np.sin(
            0.5 * np.pi * np.clip(iteration / rates.position_delay_steps, 0, 1))
    else:
        ramp = 1.0
    t = np.clip(iteration / max(total, 1), 0.0, 1.0)
    return float(ramp * np.exp(np.log(lr0) * (1 - t) + np.log(lr1) * t))


class Adam:
    """Moments and step counters per named parameter group, updated in place."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, name: str, param: np.ndarray, grad, lr: float) -> None:
        g = np.asarray(grad, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NaNGradient(f"non-finite gradient in group {name!r} ({int((~np.isfinite(g)).sum())} entries)")
        if name not in self.m:
            self.m[name] = np.zeros(param.shape)
            self.v[name] = np.zeros(param.shape)
            self.t[name] = 0
        m, v = self.m[name], self.v[name]
        if m.shape != param.shape:
            raise ValueError(f"moment shape {m.shape} does not match parameter {param.shape} for {name!r}")
        self.t[name] += 1
        t = self.t[name]
        m *= self.beta1
        m += (1 - self.beta1) * g
        v *= self.beta2
        v += (1 - self.beta2) * g * g
        bc1 = 1 - self.beta1 ** t
        bc2 = 1 - self.beta2 ** t
        step = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        param[...] = param.astype(np.float64) - step

    def remap(self, name: str, origin: np.ndarray) -> None:
        """Follow a structural change: row i takes old row origin[i], or zeros when -1."""
        if name not in self.m:
            return
        for store in (self.m, self.v):
            old = store[name]
            new = np.zeros((len(origin),) + old.shape[1:])
            src = origin >= 0
            new[src] = old[origin[src]]
            store[name] = new

    def state(self) -> dict:
        return {"m": self.m, "v": self.v, "t": self.t}

    def load_state(self, state: dict) -> None:
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}
        self.t = {k: int(v) for k, v in state["t"].items()}
