"""Forward image formation and its analytic adjoint.

Per-gaussian geometry (projection, smoothing filters, SH colours, optional
appearance transform) is vectorized in numpy; per-pixel compositing runs in
the numba kernels of :mod:`adgs._kernels`. All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .appearance import AppearanceModel, MissingForwardState
from .scene import Camera, FilterConfig, GaussianCloud, quat_to_rotmat, sigmoid
from .sh import n_coeffs, sh_basis

TILE = 16
DET_MIN = 1e-12


class DegenerateCovariance(ValueError):
    pass


@dataclass(frozen=True)
class FrameDependent:
    appearance: AppearanceModel
    view: int


@dataclass
class AttributeGradients:
    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: np.ndarray
    sh_coeffs: np.ndarray
    appearance_embed: np.ndarray
    appearance: Optional[dict] = None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("position", "log_scale", "rotation", "opacity_logit", "sh_coeffs", "appearance_embed")}

    @classmethod
    def zeros_like(cls, cloud: GaussianCloud) -> "AttributeGradients":
        return cls(*(np.zeros(getattr(cloud, k).shape) for k in
                     ("position", "log_scale", "rotation", "opacity_logit", "sh_coeffs", "appearance_embed")))

    def __iadd__(self, other: "AttributeGradients"):
        for k, v in other.as_dict().items():
            getattr(self, k)[...] += v
        if other.appearance is not None:
            if self.appearance is None:
                self.appearance = {k: v.copy() for k, v in other.appearance.items()}
            else:
                for k, v in other.appearance.items():
                    self.appearance[k] += v
        return self


@dataclass
class RenderOutput:
    image: np.ndarray                 # (H, W, 3) unclamped
    final_transmittance: np.ndarray   # (H, W)
    contributor_count: np.ndarray     # (H, W)
    per_gaussian_screen_grad_accum: np.ndarray  # (N, 2), filled by backward
    visible: np.ndarray               # (N,) bool
    ctx: Optional[dict] = field(default=None, repr=False)

    @property
    def clamped(self) -> np.ndarray:
        return np.clip(self.image, 0.0, 1.0)

    @property
    def clamp_pass(self) -> np.ndarray:
        return (self.image >= 0.0) & (self.image <= 1.0)


def projected_opacity(alpha, mean_2d, cov_2d, y) -> float:
    cov = np.asarray(cov_2d, dtype=np.float64)
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if det <= DET_MIN:
        raise DegenerateCovariance(f"determinant {det}")
    d = np.asarray(y, dtype=np.float64) - np.asarray(mean_2d, dtype=np.float64)
    return float(alpha * np.exp(-0.5 * d @ np.linalg.solve(cov, d)))


def _det2(C):
    return C[:, 0, 0] * C[:, 1, 1] - C[:, 0, 1] * C[:, 1, 0]


def _inv2(C, det):
    inv = np.empty_like(C)
    inv[:, 0, 0] = C[:, 1, 1] / det
    inv[:, 1, 1] = C[:, 0, 0] / det
    inv[:, 0, 1] = -C[:, 0, 1] / det
    inv[:, 1, 0] = -C[:, 1, 0] / det
    return inv


def splat_rects(means, cov2d, width, height):
    """Inclusive pixel bounds of the axis-aligned 3-sigma box, clipped to the image."""
    hx = 3.0 * np.sqrt(cov2d[:, 0, 0])
    hy = 3.0 * np.sqrt(cov2d[:, 1, 1])
    lo_x = np.ceil(np.clip(means[:, 0] - hx, -1.0, width))
    hi_x = np.floor(np.clip(means[:, 0] + hx, -1.0, width))
    lo_y = np.ceil(np.clip(means[:, 1] - hy, -1.0, height))
    hi_y = np.floor(np.clip(means[:, 1] + hy, -1.0, height))
    rect = np.stack([np.maximum(lo_x, 0), np.minimum(hi_x, width - 1),
                     np.maximum(lo_y, 0), np.minimum(hi_y, height - 1)], axis=1).astype(np.int64)
    on_screen = (rect[:, 0] <= rect[:, 1]) & (rect[:, 2] <= rect[:, 3])
    return rect, on_screen


def composite(means, conics, opacities, colors, rect, order, height, width):
    """Alpha-blend splats already in screen space. ``order`` is front to back."""
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    offsets, entries = K.bin_tiles(np.ascontiguousarray(order, dtype=np.int64), rect, TILE, tiles_x, tiles_y)
    image, trans, count = K.composite_forward(means, conics, opacities, colors, rect, offsets, entries,
                                              height, width, TILE, tiles_x)
    return image, trans, count, (offsets, entries, tiles_x)


def rasterize(cloud: GaussianCloud, camera: Camera, color_mode: Optional[FrameDependent] = None, *,
              sh_degree: int = 3, filters: FilterConfig = FilterConfig()) -> RenderOutput:
    """Render ``cloud`` from ``camera``. ``color_mode=None`` is frame independent."""
    n = cloud.count
    H, W = camera.height, camera.width
    X_all = cloud.position.astype(np.float64)
    t_all = camera.world_to_camera(X_all) if n else np.zeros((0, 3))
    front = t_all[:, 2] > camera.near
    idx = np.nonzero(front)[0]

    X = X_all[idx]
    t = t_all[idx]
    ls = cloud.log_scale[idx].astype(np.float64)
    q = cloud.rotation[idx].astype(np.float64)
    lo = cloud.opacity_logit[idx].astype(np.float64)
    srate = cloud.sampling_rate[idx].astype(np.float64)

    nq = np.linalg.norm(q, axis=1)
    qn = q / nq[:, None]
    R = quat_to_rotmat(qn)
    s2 = np.exp(2.0 * ls)
    if filters.mip:
        f3 = np.where(srate > 0, filters.var_3d / np.where(srate > 0, srate, 1.0) ** 2, 0.0)
    else:
        f3 = np.zeros(len(idx))
    s2f = s2 + f3[:, None]
    opac3 = np.sqrt(np.prod(s2 / s2f, axis=1))
    Sig = np.einsum("nij,nj,nkj->nik", R, s2f, R)

    Wc = camera.rotation
    tz = t[:, 2]
    J = np.zeros((len(idx), 2, 3))
    J[:, 0, 0] = camera.fx / tz
    J[:, 0, 2] = -camera.fx * t[:, 0] / tz ** 2
    J[:, 1, 1] = camera.fy / tz
    J[:, 1, 2] = -camera.fy * t[:, 1] / tz ** 2
    T = J @ Wc
    C0 = T @ Sig @ np.transpose(T, (0, 2, 1))
    var = filters.var_2d if filters.mip else filters.dilation
    C = C0 + var * np.eye(2)
    det = _det2(C)
    if filters.mip:
        det0 = np.maximum(_det2(C0), 0.0)
        opac2 = np.sqrt(det0 / np.where(det > 0, det, 1.0))
    else:
        det0 = None
        opac2 = np.ones(len(idx))
    means = np.stack([camera.fx * t[:, 0] / tz + camera.cx, camera.fy * t[:, 1] / tz + camera.cy], axis=1)
    ok = det > DET_MIN
    detc = np.where(ok, det, 1.0)
    conic_m = _inv2(C, detc)
    sig = sigmoid(lo)
    opacity = sig * opac3 * opac2

    rect, on_screen = splat_rects(means, C, W, H)
    ok &= on_screen & (opacity > 0)

    # colours
    dirs = X - camera.center
    dnorm = np.linalg.norm(dirs, axis=1)
    dn = dirs / np.where(dnorm > 0, dnorm, 1.0)[:, None]
    k = n_coeffs(sh_degree)
    Y = sh_basis(dn, sh_degree)
    sh = cloud.sh_coeffs[idx, :k, :].astype(np.float64)
    raw = np.einsum("nk,nkc->nc", Y[:, :k], sh) + 0.5
    col = np.maximum(raw, 0.0)
    app_cache = None
    if color_mode is not None:
        p = cloud.appearance_embed[idx].astype(np.float64)
        colors, app_cache = color_mode.appearance.forward(p, color_mode.view, col)
    else:
        colors = col

    conics = np.stack([conic_m[:, 0, 0], conic_m[:, 0, 1], conic_m[:, 1, 1]], axis=1)
    depth_order = np.lexsort((cloud.ids[idx], tz))
    order = depth_order[ok[depth_order]]
    image, trans, count, bins = composite(np.ascontiguousarray(means), np.ascontiguousarray(conics),
                                          np.ascontiguousarray(opacity), np.ascontiguousarray(colors),
                                          rect, order, H, W)
    visible = np.zeros(n, dtype=bool)
    visible[idx[ok]] = True
    ctx = dict(idx=idx, X=X, t=t, nq=nq, qn=qn, R=R, s2=s2, f3=f3, s2f=s2f, opac3=opac3, Sig=Sig, J=J, T=T,
               C0=C0, C=C, det0=det0, opac2=opac2, conic_m=conic_m, conics=conics, means=means, sig=sig,
               opacity=opacity, rect=rect, order=order, bins=bins, dn=dn, dnorm=dnorm, Y=Y, k=k, sh=sh,
               raw=raw, colors=colors, app_cache=app_cache, color_mode=color_mode, camera=camera,
               filters=filters, sh_degree=sh_degree, n=n, embed_dim=cloud.embed_dim)
    return RenderOutput(image, trans, count, np.zeros((n, 2)), visible, ctx)


def rasterize_backward(out: RenderOutput, grad_image) -> AttributeGradients:
    """Gradients of a scalar loss w.r.t. every trainable attribute, given dL/d image."""
    ctx = out.ctx
    if ctx is None:
        raise MissingForwardState("rasterize_backward needs the RenderOutput of a paired forward")
    camera: Camera = ctx["camera"]
    H, W = camera.height, camera.width
    n = ctx["n"]
    idx = ctx["idx"]
    m = len(idx)
    grads = AttributeGradients(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)), np.zeros(n),
                               np.zeros((n, 16, 3)), np.zeros((n, ctx["embed_dim"])))
    grad_image = np.ascontiguousarray(grad_image, dtype=np.float64)
    if m == 0 or not np.any(grad_image):
        return grads

    offsets, entries, tiles_x = ctx["bins"]
    slots = K.composite_backward(ctx["means"], ctx["conics"], ctx["opacity"], np.ascontiguousarray(ctx["colors"]),
                                 ctx["rect"], offsets, entries, H, W, TILE, tiles_x, grad_image)
    g = K.reduce_slots(slots, entries, m)
    g_mean = g[:, 0:2]
    g_conic = g[:, 2:5]
    g_opac = g[:, 5]
    g_color = g[:, 6:9]

    # colour path
    if ctx["color_mode"] is not None:
        g_p, g_col, app_grads = ctx["color_mode"].appearance.backward(ctx["app_cache"], g_color)
        grads.appearance_embed[idx] = g_p
        grads.appearance = app_grads
    else:
        g_col = g_color
    k = ctx["k"]
    g_raw = g_col * (ctx["raw"] > 0)
    grads.sh_coeffs[idx, :k, :] = ctx["Y"][:, :k, None] * g_raw[:, None, :]
    _, dY = sh_basis(ctx["dn"], ctx["sh_degree"], with_grad=True)
    g_Y = np.einsum("nkc,nc->nk", ctx["sh"], g_raw)
    g_dn = np.einsum("nk,nkj->nj", g_Y, dY[:, :k, :])
    dn = ctx["dn"]
    g_X = (g_dn - dn * np.sum(dn * g_dn, axis=1, keepdims=True)) / ctx["dnorm"][:, None]

    # opacity path
    sig, opac2, opac3 = ctx["sig"], ctx["opac2"], ctx["opac3"]
    g_sig = g_opac * opac3 * opac2
    grads.opacity_logit[idx] = g_sig * sig * (1.0 - sig)
    g_opac3 = g_opac * sig * opac2
    g_ls = (g_opac3 * opac3)[:, None] * ctx["f3"][:, None] / ctx["s2f"]

    # conic -> 2D covariance
    G = np.empty((m, 2, 2))
    G[:, 0, 0] = g_conic[:, 0]
    G[:, 1, 1] = g_conic[:, 2]
    G[:, 0, 1] = G[:, 1, 0] = 0.5 * g_conic[:, 1]
    Ci = ctx["conic_m"]
    g_C0 = -Ci @ G @ Ci
    if ctx["filters"].mip:
        C0 = ctx["C0"]
        det0 = ctx["det0"]
        safe = det0 > 0
        C0i = _inv2(C0, np.where(safe, det0, 1.0))
        coef = np.where(safe, g_opac * sig * opac3 * opac2 * 0.5, 0.0)
        g_C0 = g_C0 + coef[:, None, None] * (C0i - Ci)

    # 2D covariance -> 3D covariance and Jacobian
    T, Sig, J = ctx["T"], ctx["Sig"], ctx["J"]
    Tt = np.transpose(T, (0, 2, 1))
    g_Sig = Tt @ g_C0 @ T
    g_T = 2.0 * g_C0 @ T @ Sig
    g_J = g_T @ camera.rotation.T
    t = ctx["t"]
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    fx, fy = camera.fx, camera.fy
    g_t = np.zeros((m, 3))
    g_t[:, 0] += g_J[:, 0, 2] * (-fx / tz ** 2)
    g_t[:, 1] += g_J[:, 1, 2] * (-fy / tz ** 2)
    g_t[:, 2] += (g_J[:, 0, 0] * (-fx / tz ** 2) + g_J[:, 0, 2] * (2.0 * fx * tx / tz ** 3)
                  + g_J[:, 1, 1] * (-fy / tz ** 2) + g_J[:, 1, 2] * (2.0 * fy * ty / tz ** 3))
    g_t[:, 0] += g_mean[:, 0] * fx / tz
    g_t[:, 1] += g_mean[:, 1] * fy / tz
    g_t[:, 2] += -g_mean[:, 0] * fx * tx / tz ** 2 - g_mean[:, 1] * fy * ty / tz ** 2
    grads.position[idx] = g_t @ camera.rotation + g_X

    # 3D covariance -> scale and rotation
    R, s2f, s2 = ctx["R"], ctx["s2f"], ctx["s2"]
    g_s2f = np.einsum("nij,nik,nkj->nj", R, g_Sig, R)
    g_ls += 2.0 * s2 * g_s2f
    grads.log_scale[idx] = g_ls
    g_R = 2.0 * g_Sig @ R * s2f[:, None, :]
    grads.rotation[idx] = _quat_backward(ctx["qn"], ctx["nq"], g_R)

    screen = np.zeros((n, 2))
    screen[idx, 0] = g_mean[:, 0] * 0.5 * W
    screen[idx, 1] = g_mean[:, 1] * 0.5 * H
    out.per_gaussian_screen_grad_accum[...] = screen
    return grads


def _quat_backward(qn, nq, g_R):
    w, x, y, z = qn.T
    gw = 2.0 * (-z * g_R[:, 0, 1] + y * g_R[:, 0, 2] + z * g_R[:, 1, 0] - x * g_R[:, 1, 2]
                - y * g_R[:, 2, 0] + x * g_R[:, 2, 1])
    gx = 2.0 * (y * g_R[:, 0, 1] + z * g_R[:, 0, 2] + y * g_R[:, 1, 0] - 2.0 * x * g_R[:, 1, 1]
                - w * g_R[:, 1, 2] + z * g_R[:, 2, 0] + w * g_R[:, 2, 1] - 2.0 * x * g_R[:, 2, 2])
    gy = 2.0 * (-2.0 * y * g_R[:, 0, 0] + x * g_R[:, 0, 1] + w * g_R[:, 0, 2] + x * g_R[:, 1, 0]
                + z * g_R[:, 1, 2] - w * g_R[:, 2, 0] + z * g_R[:, 2, 1] - 2.0 * y * g_R[:, 2, 2])
    gz = 2.0 * (-2.0 * z * g_R[:, 0, 0] - w * g_R[:, 0, 1] + x * g_R[:, 0, 2] + w * g_R[:, 1, 0]
                - 2.0 * z * g_R[:, 1, 1] + y * g_R[:, 1, 2] + x * g_R[:, 2, 0] + y * g_R[:, 2, 1])
    g_qn = np.stack([gw, gx, gy, gz], axis=1)
    return (g_qn - qn * np.sum(qn * g_qn, axis=1, keepdims=True)) / nq[:, None]


def pixel_blend_weights(out: RenderOutput, x: int, y: int):
    """Per-gaussian blend weights at pixel (x, y) and the final transmittance there."""
    ctx = out.ctx
    w_vis, T = K.pixel_weights(ctx["means"], ctx["conics"], ctx["opacity"], ctx["rect"],
                               np.ascontiguousarray(ctx["order"], dtype=np.int64), x, y)
    w = np.zeros(ctx["n"])
    w[ctx["idx"]] = w_vis
    return w, T


def render(cloud: GaussianCloud, camera: Camera, color_mode=None, **kw) -> np.ndarray:
    """Clamped [0, 1] image, no backward state retained."""
    out = rasterize(cloud, camera, color_mode, **kw)
    return out.clamped
