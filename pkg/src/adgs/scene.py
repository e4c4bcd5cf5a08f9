"""Gaussian scene representation, pinhole cameras and projection geometry."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .sh import N_COEFFS

DEFAULT_EMBED_DIM = 24

# Float attributes in checkpoint order. ``sampling_rate`` is a non-trainable
# buffer for the 3D smoothing filter.
FLOAT_ATTRS = ("position", "log_scale", "rotation", "opacity_logit",
               "sh_coeffs", "appearance_embed", "sampling_rate")
TRAINABLE_ATTRS = FLOAT_ATTRS[:-1]


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


@dataclass
class GaussianCloud:
    position: np.ndarray          # (N, 3)
    log_scale: np.ndarray         # (N, 3)
    rotation: np.ndarray          # (N, 4) quaternion, w first
    opacity_logit: np.ndarray     # (N,)
    sh_coeffs: np.ndarray         # (N, 16, 3)
    appearance_embed: np.ndarray  # (N, d_p)
    sampling_rate: np.ndarray     # (N,) max focal/depth over training cameras
    ids: np.ndarray               # (N,) int64
    next_id: int = 0

    def __post_init__(self):
        n = len(self.ids)
        for name in FLOAT_ATTRS:
            if len(getattr(self, name)) != n:
                raise ValueError(f"attribute {name} has length {len(getattr(self, name))}, expected {n}")
        if n and self.next_id <= int(self.ids.max()):
            self.next_id = int(self.ids.max()) + 1

    @property
    def count(self) -> int:
        return len(self.ids)

    @property
    def embed_dim(self) -> int:
        return self.appearance_embed.shape[1]

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit.astype(np.float64))

    @classmethod
    def empty(cls, embed_dim: int = DEFAULT_EMBED_DIM, dtype=np.float32) -> "GaussianCloud":
        return cls.create(np.zeros((0, 3)), embed_dim=embed_dim, dtype=dtype)

    @classmethod
    def create(cls, position, log_scale=None, rotation=None, opacity_logit=None,
               sh_coeffs=None, appearance_embed=None, sampling_rate=None,
               ids=None, embed_dim: int = DEFAULT_EMBED_DIM, dtype=np.float32) -> "GaussianCloud":
        position = np.asarray(position, dtype=dtype).reshape(-1, 3)
        n = len(position)
        if log_scale is None:
            log_scale = np.full((n, 3), np.log(0.05))
        if rotation is None:
            rotation = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        if opacity_logit is None:
            opacity_logit = np.zeros(n)
        if sh_coeffs is None:
            sh_coeffs = np.zeros((n, N_COEFFS, 3))
        if appearance_embed is None:
            appearance_embed = np.zeros((n, embed_dim))
        appearance_embed = np.asarray(appearance_embed)
        embed_dim = appearance_embed.shape[-1] if appearance_embed.ndim == 2 else embed_dim
        if sampling_rate is None:
            sampling_rate = np.zeros(n)
        if ids is None:
            ids = np.arange(n)
        return cls(
            position=position,
            log_scale=np.asarray(log_scale, dtype=dtype).reshape(n, 3),
            rotation=np.asarray(rotation, dtype=dtype).reshape(n, 4),
            opacity_logit=np.asarray(opacity_logit, dtype=dtype).reshape(n),
            sh_coeffs=np.asarray(sh_coeffs, dtype=dtype).reshape(n, N_COEFFS, 3),
            appearance_embed=np.asarray(appearance_embed, dtype=dtype).reshape(n, embed_dim),
            sampling_rate=np.asarray(sampling_rate, dtype=dtype).reshape(n),
            ids=np.asarray(ids, dtype=np.int64).reshape(n),
        )

    def copy(self) -> "GaussianCloud":
        return replace(self, **{k: getattr(self, k).copy() for k in FLOAT_ATTRS + ("ids",)})

    def astype(self, dtype) -> "GaussianCloud":
        return replace(self, **{k: getattr(self, k).astype(dtype) for k in FLOAT_ATTRS},
                       ids=self.ids.copy())

    def take(self, index) -> "GaussianCloud":
        index = np.asarray(index, dtype=np.intp)
        return replace(self, **{k: getattr(self, k)[index].copy() for k in FLOAT_ATTRS + ("ids",)})

    def append(self, other: "GaussianCloud") -> "GaussianCloud":
        out = replace(self, **{k: np.concatenate([getattr(self, k), getattr(other, k).astype(getattr(self, k).dtype)])
                               for k in FLOAT_ATTRS + ("ids",)})
        out.next_id = max(self.next_id, other.next_id)
        return out

    def index_of(self, ids) -> np.ndarray:
        """Row indices of ``ids``; raises KeyError when one is absent."""
        order = np.argsort(self.ids, kind="stable")
        ids = np.asarray(ids, dtype=np.int64)
        pos = np.searchsorted(self.ids, ids, sorter=order)
        pos = np.minimum(pos, max(len(order) - 1, 0))
        if len(order) == 0 or not np.all(self.ids[order[pos]] == ids):
            missing = sorted(set(ids.tolist()) - set(self.ids.tolist()))
            raise KeyError(f"unknown gaussian ids {missing[:5]}")
        return order[pos]

    def normalize_rotations(self) -> None:
        q = self.rotation.astype(np.float64)
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        self.rotation[...] = q


@dataclass
class Camera:
    rotation: np.ndarray     # (3, 3) world -> camera
    translation: np.ndarray  # (3,)
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation is not orthonormal")
        if self.width < 1 or self.height < 1:
            raise ValueError("camera resolution must be positive")
        if self.near <= 0:
            raise ValueError("near plane must be positive")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
                "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "near": self.near}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(np.array(d["rotation"]), np.array(d["translation"]), float(d["fx"]), float(d["fy"]),
                   float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]), float(d.get("near", 0.01)))

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, near=0.01) -> "Camera":
        """Camera at ``eye`` looking at ``target``; x right, y down, z forward."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(R, -R @ eye, fx, fy, (width - 1) / 2.0, (height - 1) / 2.0, width, height, near)


def scene_extent(cameras) -> float:
    """Bounding radius of the training camera centers, times 1.1."""
    centers = np.stack([c.center for c in cameras])
    radius = float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()) * 1.1
    return radius if radius > 0 else 1.0


@dataclass(frozen=True)
class FilterConfig:
    """Screen-space and 3D smoothing filters applied at projection time."""
    mip: bool = True
    var_2d: float = 0.1
    var_3d: float = 0.2
    dilation: float = 0.3  # used when mip is off


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """(N, 4) quaternions (w, x, y, z), normalized here, to (N, 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = q.reshape(-1, 4)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def covariance_3d(log_scale, rotation) -> np.ndarray:
    """Sigma = R diag(exp(log_scale))^2 R^T; accepts single or batched inputs."""
    log_scale = np.asarray(log_scale, dtype=np.float64)
    single = log_scale.ndim == 1
    s2 = np.exp(2.0 * log_scale.reshape(-1, 3))
    R = quat_to_rotmat(np.asarray(rotation, dtype=np.float64).reshape(-1, 4))
    cov = np.einsum("nij,nj,nkj->nik", R, s2, R)
    return cov[0] if single else cov


class CulledBehindCamera(Exception):
    pass


def perspective_jacobian(t: np.ndarray, camera: Camera) -> np.ndarray:
    """Jacobian of pixel coordinates w.r.t. camera-space points t (N, 3)."""
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    J = np.zeros((len(t), 2, 3))
    J[:, 0, 0] = camera.fx / tz
    J[:, 0, 2] = -camera.fx * tx / tz ** 2
    J[:, 1, 1] = camera.fy / tz
    J[:, 1, 2] = -camera.fy * ty / tz ** 2
    return J


def project_gaussian(position, cov3d, camera: Camera, mip_cfg: FilterConfig = FilterConfig(),
                     sampling_rate: Optional[float] = None) -> dict:
    """Project one Gaussian. Raises CulledBehindCamera when depth <= near.

    The 3D smoothing term is added to ``cov3d`` only when mip is on and a
    positive ``sampling_rate`` is given.
    """
    t = camera.world_to_camera(np.asarray(position, dtype=np.float64).reshape(1, 3))
    depth = float(t[0, 2])
    if depth <= camera.near:
        raise CulledBehindCamera(f"depth {depth} <= near {camera.near}")
    cov = np.asarray(cov3d, dtype=np.float64).copy()
    if mip_cfg.mip and sampling_rate:
        cov = cov + mip_cfg.var_3d / sampling_rate ** 2 * np.eye(3)
    T = perspective_jacobian(t, camera)[0] @ camera.rotation
    cov2d = T @ cov @ T.T
    cov2d += (mip_cfg.var_2d if mip_cfg.mip else mip_cfg.dilation) * np.eye(2)
    mean = np.array([camera.fx * t[0, 0] / depth + camera.cx, camera.fy * t[0, 1] / depth + camera.cy])
    return {"mean_2d": mean, "cov_2d": cov2d, "depth": depth}


def compute_sampling_rate(positions, cameras, margin: float = 0.15) -> np.ndarray:
    """Per-Gaussian max focal/depth over cameras that see the point.

    A point counts as seen when it is in front of the near plane and projects
    inside the image enlarged by ``margin``. Points seen by no camera fall back
    to the max over cameras with positive depth, then to zero.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    best = np.zeros(len(pos))
    fallback = np.zeros(len(pos))
    for cam in cameras:
        t = cam.world_to_camera(pos)
        z = t[:, 2]
        front = z > cam.near
        zs = np.where(front, z, 1.0)
        u = cam.fx * t[:, 0] / zs + cam.cx
        v = cam.fy * t[:, 1] / zs + cam.cy
        mw, mh = margin * cam.width, margin * cam.height
        inside = front & (u >= -mw) & (u <= cam.width - 1 + mw) & (v >= -mh) & (v <= cam.height - 1 + mh)
        rate = max(cam.fx, cam.fy) / zs
        best = np.where(inside, np.maximum(best, rate), best)
        fallback = np.where(front, np.maximum(fallback, rate), fallback)
    return np.where(best > 0, best, fallback)
