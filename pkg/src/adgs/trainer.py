"""Training loops for the single, GS-GS (two co-regularized models) and
EMA-GS (one model plus moving-average proxy) modes, with evaluation and
bit-exact checkpoint/resume."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from . import checkpoint as ckpt
from .appearance import AppearanceModel
from .densify import DensifyConfig, DensifyStats, densify_and_prune
from .ema import EmaState
from .losses import (STOP_GRAD, LossWeights, l1_with_grads, masked_recon_loss, mutual_consistency_loss, psnr,
                     ssim, total_loss)
from .masking import (MASK_MODES, MissingCues, SoftMaskStore, builtin_feature_embed, compute_hard_mask,
                      cosine_target_map, select_mask)
from .optim import Adam, LearningRates, NaNGradient, position_lr
from .rasterizer import AttributeGradients, FrameDependent, RenderOutput, rasterize, rasterize_backward
from .scene import FLOAT_ATTRS, FilterConfig, GaussianCloud, compute_sampling_rate, logit
from .sh import MAX_DEGREE, rgb_to_sh_dc
from .synthdata import Dataset

log = logging.getLogger(__name__)

MODES = ("single", "gs-gs", "ema-gs")
CLOUD_GROUPS = ("position", "log_scale", "rotation", "opacity_logit", "sh_dc", "sh_rest", "appearance_embed")


class MissingTestViews(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "single"
    iterations: int = 2000
    warmup: int = 200
    seed: int = 0
    seed2: int = 1
    data: str = ""
    eval_interval: int = 0
    checkpoint_interval: int = 0
    # schedules
    sh_interval: int = 1000
    max_sh_degree: int = MAX_DEGREE
    sampling_rate_interval: int = 100
    mip: bool = True
    init_opacity: float = 0.1
    use_appearance: bool = False
    appearance_hidden: int = 32
    appearance_color_input: bool = True
    shared_appearance: bool = True
    # densification
    densify_interval: int = 1000
    densify_start: int = 500
    grad_threshold: float = 0.0002
    percent_dense: float = 0.01
    min_opacity: float = 0.005
    # learning rates
    position_lr_init: float = 0.00016
    position_lr_final: float = 0.0000016
    position_lr_delay_mult: float = 0.01
    position_lr_delay_steps: int = 0
    feature_lr: float = 0.0025
    opacity_lr: float = 0.1
    scaling_lr: float = 0.005
    rotation_lr: float = 0.001
    embed_lr: float = 0.005
    view_embed_lr: float = 0.001
    mlp_lr: float = 0.0005
    # losses
    lambda_dssim: float = 0.2
    lambda_m: float = 0.1
    lambda_mask: float = 1.0
    consistency_stop_grad: str = "none"
    # masks
    masks: str = "hs"
    hard_mask_refresh: int = 0
    soft_mask_lr: float = 0.1
    # ema
    beta: float = 0.8
    ema_include_embed: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 <= self.warmup < self.iterations:
            raise ValueError(f"warmup {self.warmup} must lie in [0, iterations={self.iterations})")
        if self.consistency_stop_grad not in STOP_GRAD:
            raise ValueError(f"consistency_stop_grad must be one of {STOP_GRAD}, got {self.consistency_stop_grad!r}")
        if self.masks not in MASK_MODES:
            raise ValueError(f"masks must be one of {MASK_MODES}, got {self.masks!r}")
        if self.mode == "ema-gs" and not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.mode == "gs-gs" and self.seed == self.seed2:
            raise ValueError("gs-gs needs distinct seeds for its two models")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_dssim, self.lambda_m, self.lambda_mask)

    @property
    def rates(self) -> LearningRates:
        return LearningRates(self.position_lr_init, self.position_lr_final, self.position_lr_delay_mult,
                             self.position_lr_delay_steps, self.feature_lr, 20.0, self.opacity_lr,
                             self.scaling_lr, self.rotation_lr, self.embed_lr, self.view_embed_lr, self.mlp_lr)

    @property
    def densify(self) -> DensifyConfig:
        return DensifyConfig(self.densify_interval, self.densify_start, self.grad_threshold,
                             self.percent_dense, self.min_opacity)

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))


class ViewSampler:
    """Visits every training view once per epoch in a seeded random order."""

    def __init__(self, n_views: int, seed: int):
        self.n = n_views
        self.rng = np.random.default_rng(seed)
        self.perm = np.zeros(0, dtype=np.int64)
        self.pos = 0

    def next(self) -> int:
        if self.pos >= len(self.perm):
            self.perm = self.rng.permutation(self.n)
            self.pos = 0
        v = int(self.perm[self.pos])
        self.pos += 1
        return v

    def state(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "perm": self.perm.tolist(), "pos": self.pos}

    def load_state(self, s: dict) -> None:
        self.rng.bit_generator.state = s["rng"]
        self.perm = np.asarray(s["perm"], dtype=np.int64)
        self.pos = int(s["pos"])


def init_cloud(points, seed: int, embed_dim: int = 24, opacity: float = 0.1) -> GaussianCloud:
    """Cloud from (P, 6) xyz+rgb rows; scales from the mean distance to the 3 nearest neighbours."""
    pts = np.asarray(points, dtype=np.float64)
    xyz, rgb = pts[:, :3], pts[:, 3:6]
    k = min(4, len(xyz))
    d, _ = cKDTree(xyz).query(xyz, k=k)
    d2 = np.mean(np.asarray(d).reshape(len(xyz), -1)[:, 1:] ** 2, axis=1) if k > 1 else np.ones(len(xyz))
    scale = np.sqrt(np.maximum(d2, 1e-7))
    sh = np.zeros((len(xyz), 16, 3))
    sh[:, 0] = rgb_to_sh_dc(rgb)
    rng = np.random.default_rng(seed)
    return GaussianCloud.create(xyz, np.log(scale)[:, None].repeat(3, axis=1), None,
                                np.full(len(xyz), logit(opacity)), sh,
                                rng.normal(0.0, 0.1, (len(xyz), embed_dim)), embed_dim=embed_dim)


def _param_views(cloud: GaussianCloud) -> dict:
    return {"position": cloud.position, "log_scale": cloud.log_scale, "rotation": cloud.rotation,
            "opacity_logit": cloud.opacity_logit, "sh_dc": cloud.sh_coeffs[:, :1],
            "sh_rest": cloud.sh_coeffs[:, 1:], "appearance_embed": cloud.appearance_embed}


def _grad_views(g: AttributeGradients) -> dict:
    return {"position": g.position, "log_scale": g.log_scale, "rotation": g.rotation,
            "opacity_logit": g.opacity_logit, "sh_dc": g.sh_coeffs[:, :1], "sh_rest": g.sh_coeffs[:, 1:],
            "appearance_embed": g.appearance_embed}


class ModelState:
    """One trainable cloud with its optimizer, densify statistics, view sampler
    and split RNG."""

    def __init__(self, cloud: GaussianCloud, n_views: int, seed: int):
        self.cloud = cloud
        self.optim = Adam()
        self.stats = DensifyStats(cloud.count)
        self.sampler = ViewSampler(n_views, seed)
        self.rng = np.random.default_rng([seed, 1])

    def state(self) -> dict:
        return {"sampler": self.sampler.state(), "rng": self.rng.bit_generator.state,
                "optim_t": self.optim.t, "next_id": self.cloud.next_id}


class Trainer:
    def __init__(self, cfg: TrainConfig, data: Dataset):
        self.cfg = cfg
        self.data = data
        n_views = len(data.train_cameras)
        H, W = data.train_images.shape[1:3]
        self.extent = data.extent
        self.filters = FilterConfig(mip=cfg.mip)
        seeds = [cfg.seed] + ([cfg.seed2] if cfg.mode == "gs-gs" else [])
        self.models = []
        for s in seeds:
            cloud = init_cloud(data.init_points, s, opacity=cfg.init_opacity)
            self.models.append(ModelState(cloud, n_views, s))
        # one appearance network shared by both gs-gs models unless configured otherwise
        n_app = 0 if not cfg.use_appearance else (1 if cfg.shared_appearance else len(self.models))
        self.appearances = [AppearanceModel(n_views, self.models[0].cloud.embed_dim, hidden=cfg.appearance_hidden,
                                            seed=s + 7919, use_color_input=cfg.appearance_color_input)
                            for s in seeds[:n_app]]
        self.app_optims = [Adam() for _ in self.appearances]
        self.ema = EmaState(self.models[0].cloud, cfg.beta, cfg.ema_include_embed) if cfg.mode == "ema-gs" else None
        self.hard = np.ones((n_views, H, W), dtype=np.float32)
        self.hard_ready = False
        self.soft = SoftMaskStore(n_views, H, W, cfg.soft_mask_lr)
        self._cues = {}
        self.iteration = 0
        self.counters: Counter = Counter()
        self.history: list = []
        self.events_log: list = []
        # where to write a diagnostic checkpoint if a gradient goes non-finite
        self.dump_path = None

    # ------------------------------------------------------------------ helpers
    @property
    def sh_degree(self) -> int:
        return min(self.cfg.max_sh_degree, self.iteration // self.cfg.sh_interval)

    def cues(self, view: int):
        if view not in self._cues:
            self._cues[view] = self.data.cues(view)
        return self._cues[view]

    @property
    def appearance(self) -> Optional[AppearanceModel]:
        """Appearance network of model 1, or None when appearance modeling is off."""
        return self.appearances[0] if self.appearances else None

    def _appearance_of(self, model: int) -> Optional[AppearanceModel]:
        if not self.appearances:
            return None
        return self.appearances[min(model, len(self.appearances) - 1)]

    def _render(self, cloud, view: int, frame_dependent: bool, kind: str, camera=None,
                model: int = 0) -> RenderOutput:
        self.counters[kind] += 1
        app = self._appearance_of(model)
        mode = FrameDependent(app, view) if (frame_dependent and app is not None) else None
        cam = self.data.train_cameras[view] if camera is None else camera
        return rasterize(cloud, cam, mode, sh_degree=self.sh_degree, filters=self.filters)

    def _mask(self, which: str, view: int) -> np.ndarray:
        if which == "hard":
            return self.hard[view]
        if which == "soft":
            return self.soft[view]
        return np.ones(self.hard.shape[1:], dtype=np.float32)

    def _soft_mask_update(self, view: int, render) -> float:
        if self.cfg.masks not in ("hs", "soft") or self.cfg.lambda_mask == 0:
            return 0.0
        cue = self.cues(view)
        if cue.feature_map is None:
            return 0.0
        stride = self.hard.shape[1] // cue.feature_map.shape[0]
        H, W = self.hard.shape[1:]
        target = cosine_target_map(cue.feature_map, builtin_feature_embed(np.clip(render, 0, 1), stride), H, W)
        loss = float(np.mean(np.abs(self.soft[view] - target)))
        self.soft.step(view, target)
        return loss

    def compute_hard_masks(self) -> None:
        """Multi-cue hard mask for every training view from model 1's current renders."""
        for v in range(len(self.data.train_cameras)):
            out = self._render(self.models[0].cloud, v, True, "hard_mask")
            try:
                self.hard[v] = compute_hard_mask(out.clamped, self.data.train_images[v], self.cues(v))
            except MissingCues as exc:
                log.warning("view %d: %s; hard mask left all-ones", v, exc)
                self.hard[v] = 1.0
        self.hard_ready = True

    def _refresh_sampling_rates(self) -> None:
        for m in self.models:
            m.cloud.sampling_rate[...] = compute_sampling_rate(m.cloud.position, self.data.train_cameras)
        if self.ema is not None:
            # the shadow shares the live filter sizes, so both renders see the same smoothing
            self.ema.shadow.sampling_rate[...] = self.models[0].cloud.sampling_rate

    def _optimizer_step(self, m: ModelState, g: AttributeGradients) -> None:
        cfg = self.cfg
        r = cfg.rates
        lrs = {"position": position_lr(self.iteration, cfg.iterations, r, self.extent),
               "log_scale": r.scaling, "rotation": r.rotation, "opacity_logit": r.opacity,
               "sh_dc": r.feature, "sh_rest": r.feature / r.feature_rest_div, "appearance_embed": r.embed}
        params = _param_views(m.cloud)
        grads = _grad_views(g)
        for name in CLOUD_GROUPS:
            if name == "appearance_embed" and self.appearance is None:
                continue
            m.optim.step(name, params[name], grads[name], lrs[name])
        m.cloud.normalize_rotations()

    def _appearance_step(self, grads: Optional[dict], model: int = 0) -> None:
        if not self.appearances or grads is None:
            return
        idx = min(model, len(self.appearances) - 1)
        r = self.cfg.rates
        for k, v in grads.items():
            lr = r.view_embed if k == "view_embeds" else r.mlp
            self.app_optims[idx].step(k, self.appearances[idx].params[k], v, lr)

    def _densify(self, m: ModelState, is_primary: bool) -> None:
        new, events, origin = densify_and_prune(m.cloud, m.stats, self.extent, self.cfg.densify, m.rng)
        for name in CLOUD_GROUPS:
            m.optim.remap(name, origin)
        m.cloud = new
        m.stats = DensifyStats(new.count)
        if is_primary and self.ema is not None:
            self.ema.apply_structural_events(events, new)
        self.events_log.append({"iteration": self.iteration, "model": self.models.index(m),
                                "cloned": sum(type(e).__name__ == "Cloned" for e in events),
                                "split": sum(type(e).__name__ == "Split" for e in events),
                                "pruned": sum(len(e.ids) for e in events if type(e).__name__ == "Pruned"),
                                "count": new.count})

    # ------------------------------------------------------------------- steps
    def step(self) -> dict:
        cfg = self.cfg
        it = self.iteration
        if it % cfg.sampling_rate_interval == 0:
            self._refresh_sampling_rates()
        if it == cfg.warmup and cfg.masks in ("hs", "hard") and not self.hard_ready:
            self.compute_hard_masks()
        elif (self.hard_ready and cfg.hard_mask_refresh > 0 and it > cfg.warmup
              and (it - cfg.warmup) % cfg.hard_mask_refresh == 0):
            self.compute_hard_masks()
        try:
            record = self._step_gs_gs() if cfg.mode == "gs-gs" else self._step_single_or_ema()
        except NaNGradient:
            log.error("non-finite gradient at iteration %d", it)
            if self.dump_path is not None:
                self.save(self.dump_path)
                log.error("state dumped to %s", self.dump_path)
            raise
        self.iteration += 1
        n = self.iteration
        if cfg.densify.due(n, cfg.iterations):
            for i, m in enumerate(self.models):
                self._densify(m, i == 0)
        record["count"] = self.models[0].cloud.count
        self.history.append(record)
        return record

    def _step_single_or_ema(self) -> dict:
        cfg = self.cfg
        it = self.iteration
        warm = it < cfg.warmup
        m = self.models[0]
        v = m.sampler.next()
        gt = self.data.train_images[v]
        out = self._render(m.cloud, v, True, "recon")
        which = select_mask(it, cfg.mode, cfg.masks)
        r1, g_img = masked_recon_loss(out.image, gt, self._mask(which, v), cfg.weights)
        mask_l = self._soft_mask_update(v, out.image)
        parts = {"r1": r1, "mask": mask_l, "me": 0.0}

        extra = None
        if cfg.mode == "ema-gs" and not warm and cfg.lambda_m > 0:
            ema_img = self.ema.render(self.data.train_cameras[v], sh_degree=self.sh_degree, filters=self.filters).image
            self.counters["ema"] += 1
            if self.appearance is None:
                me, g_me, _ = l1_with_grads(out.image, ema_img)
                g_img = g_img + cfg.lambda_m * g_me
            else:
                extra = self._render(m.cloud, v, False, "intrinsic")
                me, g_me, _ = l1_with_grads(extra.image, ema_img)
                extra_grad = cfg.lambda_m * g_me
            parts["me"] = me

        grads = rasterize_backward(out, g_img)
        m.stats.accumulate(out.per_gaussian_screen_grad_accum, out.visible)
        if extra is not None:
            grads += rasterize_backward(extra, extra_grad)
        self._optimizer_step(m, grads)
        self._appearance_step(grads.appearance)
        if self.ema is not None:
            self.ema.step(m.cloud)
        parts["total"] = total_loss(parts, cfg.weights, cfg.mode, warm)
        parts.update(iteration=it, view=v, mask=mask_l, which=which)
        return parts

    def _step_gs_gs(self) -> dict:
        cfg = self.cfg
        it = self.iteration
        warm = it < cfg.warmup
        m1, m2 = self.models
        v1, v2 = m1.sampler.next(), m2.sampler.next()
        w1, w2 = select_mask(it, "gs-gs", cfg.masks)
        o11 = self._render(m1.cloud, v1, True, "recon")
        o22 = self._render(m2.cloud, v2, True, "recon", model=1)
        r1, g11 = masked_recon_loss(o11.image, self.data.train_images[v1], self._mask(w1, v1), cfg.weights)
        r2, g22 = masked_recon_loss(o22.image, self.data.train_images[v2], self._mask(w2, v2), cfg.weights)
        mask_l = self._soft_mask_update(v1, o11.image) + self._soft_mask_update(v2, o22.image)
        parts = {"r1": r1, "r2": r2, "m1": 0.0, "m2": 0.0, "mask": mask_l}

        outs = {1: [(o11, g11)], 2: [(o22, g22)]}
        if not warm and cfg.lambda_m > 0:
            lam = cfg.lambda_m
            same = self.appearance is None
            i11 = o11 if same else self._render(m1.cloud, v1, False, "intrinsic")
            i22 = o22 if same else self._render(m2.cloud, v2, False, "intrinsic", model=1)
            i21 = self._render(m2.cloud, v1, False, "cross", model=1)
            i12 = self._render(m1.cloud, v2, False, "cross")
            sg = cfg.consistency_stop_grad
            parts["m1"], ga, gb = mutual_consistency_loss(i11.image, i21.image, sg)
            parts["m2"], gc, gd = mutual_consistency_loss(i12.image, i22.image, sg)
            if same:
                outs[1][0] = (o11, g11 + lam * ga)
                outs[2][0] = (o22, g22 + lam * gd)
            else:
                outs[1].append((i11, lam * ga))
                outs[2].append((i22, lam * gd))
            outs[2].append((i21, lam * gb))
            outs[1].append((i12, lam * gc))

        app_grads = None
        shared = len(self.appearances) <= 1
        for k, m in ((1, m1), (2, m2)):
            total = AttributeGradients.zeros_like(m.cloud)
            for j, (o, g) in enumerate(outs[k]):
                total += rasterize_backward(o, g)
                if j == 0:
                    m.stats.accumulate(o.per_gaussian_screen_grad_accum, o.visible)
            if total.appearance is not None and not shared:
                self._appearance_step(total.appearance, k - 1)
            elif total.appearance is not None:
                if app_grads is None:
                    app_grads = {kk: vv.copy() for kk, vv in total.appearance.items()}
                else:
                    for kk, vv in total.appearance.items():
                        app_grads[kk] += vv
            self._optimizer_step(m, total)
        self._appearance_step(app_grads)
        parts["total"] = total_loss(parts, cfg.weights, cfg.mode, warm)
        parts.update(iteration=it, view=v1, view2=v2, which=f"{w1}/{w2}")
        return parts

    def train(self, until: Optional[int] = None, callback: Optional[Callable[[dict], None]] = None) -> None:
        end = self.cfg.iterations if until is None else min(until, self.cfg.iterations)
        while self.iteration < end:
            rec = self.step()
            if callback is not None:
                callback(rec)

    # -------------------------------------------------------------- evaluation
    def evaluate(self, cloud: Optional[GaussianCloud] = None) -> dict:
        """Frame-independent renders of the test views against clean ground truth."""
        if len(self.data.test_cameras) == 0:
            raise MissingTestViews("dataset has no test views")
        cloud = self.models[0].cloud if cloud is None else cloud
        return evaluate_cloud(cloud, self.data, self.sh_degree, self.filters)

    def test_renders(self, cloud: Optional[GaussianCloud] = None) -> np.ndarray:
        cloud = self.models[0].cloud if cloud is None else cloud
        return np.stack([rasterize(cloud, c, None, sh_degree=self.sh_degree, filters=self.filters).clamped
                         for c in self.data.test_cameras])

    # ------------------------------------------------------------- checkpoints
    def state_arrays(self) -> dict:
        arrays = {}
        for i, m in enumerate(self.models):
            for k in FLOAT_ATTRS + ("ids",):
                arrays[f"model{i}/{k}"] = getattr(m.cloud, k)
            for k in m.optim.m:
                arrays[f"model{i}/adam_m/{k}"] = m.optim.m[k]
                arrays[f"model{i}/adam_v/{k}"] = m.optim.v[k]
            arrays[f"model{i}/stats_sum"] = m.stats.grad_sum
            arrays[f"model{i}/stats_count"] = m.stats.count
        if self.ema is not None:
            for k in FLOAT_ATTRS + ("ids",):
                arrays[f"ema/{k}"] = getattr(self.ema.shadow, k)
        for i, (app, opt) in enumerate(zip(self.appearances, self.app_optims)):
            for k, v in app.params.items():
                arrays[f"appearance{i}/{k}"] = v
            for k in opt.m:
                arrays[f"appearance{i}/adam_m/{k}"] = opt.m[k]
                arrays[f"appearance{i}/adam_v/{k}"] = opt.v[k]
        arrays["soft_mask"] = self.soft.masks
        arrays["hard_mask"] = self.hard
        return arrays

    def state_json(self) -> dict:
        return {"config": asdict(self.cfg), "iteration": self.iteration, "hard_ready": self.hard_ready,
                "models": [m.state() for m in self.models],
                "ema_next_id": self.ema.shadow.next_id if self.ema is not None else None,
                "app_optim_t": [o.t for o in self.app_optims], "counters": dict(sorted(self.counters.items())),
                "history": self.history, "events": self.events_log}

    def save(self, path) -> None:
        ckpt.save(path, self.state_arrays(), self.state_json())

    @classmethod
    def load(cls, path, data: Dataset) -> "Trainer":
        arrays, state = ckpt.load(path)
        cfg = TrainConfig(**state["config"])
        tr = cls(cfg, data)
        tr.iteration = int(state["iteration"])
        tr.hard_ready = bool(state["hard_ready"])
        for i, (m, ms) in enumerate(zip(tr.models, state["models"])):
            m.cloud = _cloud_from(arrays, f"model{i}", ms["next_id"])
            m.optim.load_state({"m": _prefixed(arrays, f"model{i}/adam_m/"),
                                "v": _prefixed(arrays, f"model{i}/adam_v/"), "t": ms["optim_t"]})
            m.stats = DensifyStats(m.cloud.count)
            m.stats.grad_sum = arrays[f"model{i}/stats_sum"].copy()
            m.stats.count = arrays[f"model{i}/stats_count"].copy()
            m.sampler.load_state(ms["sampler"])
            m.rng.bit_generator.state = ms["rng"]
        if tr.ema is not None:
            tr.ema.shadow = _cloud_from(arrays, "ema", state["ema_next_id"])
        for i, (app, opt) in enumerate(zip(tr.appearances, tr.app_optims)):
            app.load_state({k: arrays[f"appearance{i}/{k}"] for k in app.params})
            opt.load_state({"m": _prefixed(arrays, f"appearance{i}/adam_m/"),
                            "v": _prefixed(arrays, f"appearance{i}/adam_v/"), "t": state["app_optim_t"][i]})
        tr.soft.masks = arrays["soft_mask"].copy()
        tr.hard = arrays["hard_mask"].copy()
        tr.counters = Counter(state["counters"])
        tr.history = state["history"]
        tr.events_log = state["events"]
        return tr


def _prefixed(arrays: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def _cloud_from(arrays: dict, prefix: str, next_id: int) -> GaussianCloud:
    kw = {k: arrays[f"{prefix}/{k}"].copy() for k in FLOAT_ATTRS + ("ids",)}
    return GaussianCloud(**kw, next_id=int(next_id))


def evaluate_cloud(cloud: GaussianCloud, data: Dataset, sh_degree: int = MAX_DEGREE,
                   filters: FilterConfig = FilterConfig()) -> dict:
    rows = []
    for name, cam, gt in zip(data.test_names, data.test_cameras, data.test_images):
        img = rasterize(cloud, cam, None, sh_degree=sh_degree, filters=filters).clamped
        rows.append({"view": name, "psnr": psnr(img, gt), "ssim": ssim(img, gt)})
    return {"views": rows,
            "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
            "mean_ssim": float(np.mean([r["ssim"] for r in rows]))}
