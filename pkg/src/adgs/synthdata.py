"""Synthetic, fully ground-truthed datasets: an oracle Gaussian scene seen
from an orbit of cameras, with transient distractors, optional per-view
lighting shifts and every cue file the masking code consumes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image

from .masking import CueBundle, builtin_feature_embed
from .rasterizer import rasterize
from .scene import Camera, GaussianCloud, compute_sampling_rate, logit, scene_extent
from .sh import C0, rgb_to_sh_dc
from .tensorio import read_tensor, write_tensor

FORMAT_VERSION = 1
RATIO_TOLERANCE = 0.03
DEPTH_TOLERANCE = 0.05
SURFACE_ALPHA = 0.5
GRID = 4


class InfeasibleRatio(ValueError):
    pass


@dataclass
class SynthSceneSpec:
    seed: int = 0
    n_gaussians: int = 64
    n_train_views: int = 24
    n_test_views: int = 8
    width: int = 64
    height: int = 64
    distractor_ratio: float = 0.2
    lighting: str = "identity"  # or "affine"
    orbit_radius: float = 2.0
    fov_deg: float = 45.0
    points_per_gaussian: int = 4
    init_jitter: float = 0.02   # fraction of the scene extent
    feature_stride: int = 4

    def __post_init__(self):
        if not 0.0 <= self.distractor_ratio <= 0.5:
            raise ValueError(f"distractor_ratio must lie in [0, 0.5], got {self.distractor_ratio}")
        if self.lighting not in ("identity", "affine"):
            raise ValueError(f"lighting must be 'identity' or 'affine', got {self.lighting!r}")
        if self.n_train_views < 1 or self.n_gaussians < 1:
            raise ValueError("need at least one training view and one gaussian")
        if self.width % self.feature_stride or self.height % self.feature_stride:
            raise ValueError("feature_stride must divide the image size")

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))


def _streams(seed: int):
    names = ("oracle", "cameras", "lighting", "distractors", "points")
    return dict(zip(names, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(names)))))


def _random_quaternions(rng, n):
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q * np.where(q[:, :1] < 0, -1.0, 1.0)


def make_cameras(spec: SynthSceneSpec, rng):
    """Jittered orbit around the origin; test views sit between training azimuths."""
    f = (spec.width / 2.0) / np.tan(np.radians(spec.fov_deg) / 2.0)

    def ring(n, phase, elev_lo, elev_hi):
        cams = []
        for i in range(n):
            az = 2 * np.pi * (i + phase) / n + rng.uniform(-0.1, 0.1)
            el = np.radians(rng.uniform(elev_lo, elev_hi))
            r = spec.orbit_radius * (1.0 + rng.uniform(-0.05, 0.05))
            eye = r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
            cams.append(Camera.look_at(eye, np.zeros(3), [0.0, 0.0, 1.0], f, f, spec.width, spec.height))
        return cams

    train = ring(spec.n_train_views, 0.0, -30.0, 45.0)
    test = ring(spec.n_test_views, 0.5, -15.0, 30.0)
    near = 0.01 * scene_extent(train)
    for c in train + test:
        c.near = near
    return train, test


def make_oracle_cloud(spec: SynthSceneSpec, rng, train_cameras) -> GaussianCloud:
    n = spec.n_gaussians
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    pos = direction * 0.8 * rng.uniform(0, 1, (n, 1)) ** (1 / 3)
    log_scale = np.log(rng.uniform(0.15, 0.35, (n, 3)))
    rgb = rng.uniform(0.1, 0.9, (n, 3))
    sh = np.zeros((n, 16, 3))
    sh[:, 0] = rgb_to_sh_dc(rgb)
    sh[:, 1:4] = rng.normal(0.0, 0.05, (n, 3, 3))
    cloud = GaussianCloud.create(pos, log_scale, _random_quaternions(rng, n),
                                 logit(rng.uniform(0.6, 0.95, n)), sh)
    cloud.sampling_rate[...] = compute_sampling_rate(cloud.position, train_cameras)
    return cloud


def quantize(image) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def _shape_mask(rng, H, W):
    yy, xx = np.mgrid[0:H, 0:W]
    cy, cx = rng.uniform(0, H), rng.uniform(0, W)
    ry = rng.uniform(0.08, 0.3) * H
    rx = rng.uniform(0.08, 0.3) * W
    if rng.random() < 0.5:
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)


def inject_distractors(image, ratio: float, rng, max_attempts: int = 400):
    """Paint solid-coloured ellipses/rectangles until the corrupted fraction
    lies within ``ratio`` +/- 0.03.

    Returns (corrupted image, mask with 0 on painted pixels, instance map with
    -1 on untouched pixels).
    """
    img = np.array(image, copy=True)
    H, W = img.shape[:2]
    instances = np.full((H, W), -1, dtype=np.int64)
    if ratio <= 0:
        return img, np.ones((H, W), dtype=np.float32), instances
    lo, hi = ratio - RATIO_TOLERANCE, ratio + RATIO_TOLERANCE
    covered = np.zeros((H, W), dtype=bool)
    k = 0
    for _ in range(max_attempts):
        if covered.mean() >= lo:
            break
        shape = _shape_mask(rng, H, W)
        new = covered | shape
        if new.mean() > hi or not np.any(shape & ~covered):
            continue
        color = rng.uniform(0.0, 1.0, 3)
        img[shape] = color.astype(img.dtype)
        instances[shape] = k
        covered = new
        k += 1
    if not lo <= covered.mean() <= hi:
        raise InfeasibleRatio(f"could not reach corrupted fraction {ratio} at {H}x{W}")
    return img, (~covered).astype(np.float32), instances


def segment_map(instances) -> np.ndarray:
    """Distractor instances plus a 4x4 grid over the rest, relabelled 0..K-1."""
    H, W = instances.shape
    gy = np.minimum(np.arange(H) * GRID // H, GRID - 1)
    gx = np.minimum(np.arange(W) * GRID // W, GRID - 1)
    grid = gy[:, None] * GRID + gx[None, :]
    raw = np.where(instances >= 0, GRID * GRID + instances, grid)
    _, labels = np.unique(raw, return_inverse=True)
    return labels.reshape(H, W).astype(np.int64)


def expected_depth(cloud: GaussianCloud, camera: Camera):
    """Alpha-normalized z-depth and coverage, rendered with depth as colour."""
    c = cloud.copy().astype(np.float64)
    z = camera.world_to_camera(c.position)[:, 2]
    c.sh_coeffs[...] = 0.0
    c.sh_coeffs[:, 0, :] = ((z - 0.5) / C0)[:, None]
    out = rasterize(c, camera, None, sh_degree=0)
    cover = 1.0 - out.final_transmittance
    depth = out.image[..., 0] / np.where(cover > 0, cover, 1.0)
    return depth, cover


def correspondence_counts(cloud, cameras, depth_maps, cover_maps, view: int) -> np.ndarray:
    """Number of training cameras seeing each pixel's surface point (itself included).

    Pixels without a surface count the cameras whose field of view contains
    the pixel's viewing direction.
    """
    cam = cameras[view]
    H, W = cam.height, cam.width
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    rays = np.stack([(xx - cam.cx) / cam.fx, (yy - cam.cy) / cam.fy, np.ones_like(xx)], axis=-1)
    surface = cover_maps[view] >= SURFACE_ALPHA
    pts_cam = rays * depth_maps[view][..., None]
    pts = (pts_cam - cam.translation) @ cam.rotation
    dirs = rays @ cam.rotation
    counts = np.zeros((H, W), dtype=np.int64)
    for j, other in enumerate(cameras):
        t = other.world_to_camera(pts.reshape(-1, 3)).reshape(H, W, 3)
        z = t[..., 2]
        zs = np.where(z > other.near, z, 1.0)
        u = np.rint(other.fx * t[..., 0] / zs + other.cx).astype(np.int64)
        v = np.rint(other.fy * t[..., 1] / zs + other.cy).astype(np.int64)
        inside = (z > other.near) & (u >= 0) & (u < other.width) & (v >= 0) & (v < other.height)
        uc = np.clip(u, 0, other.width - 1)
        vc = np.clip(v, 0, other.height - 1)
        d_other = depth_maps[j][vc, uc]
        hit = inside & (cover_maps[j][vc, uc] >= SURFACE_ALPHA) & (np.abs(d_other - z) <= DEPTH_TOLERANCE * z)
        # points at infinity: rotation only
        td = dirs @ other.rotation.T
        zd = np.where(td[..., 2] > 0, td[..., 2], 1.0)
        ud = other.fx * td[..., 0] / zd + other.cx
        vd = other.fy * td[..., 1] / zd + other.cy
        in_view = (td[..., 2] > 0) & (ud >= -0.5) & (ud < other.width - 0.5) & (vd >= -0.5) & (vd < other.height - 0.5)
        counts += np.where(surface, hit, in_view)
    return counts


def _lighting(spec, rng, n):
    if spec.lighting == "identity":
        return np.ones((n, 3)), np.zeros((n, 3))
    return rng.uniform(0.7, 1.3, (n, 3)), rng.uniform(-0.1, 0.1, (n, 3))


def view_name(split: str, i: int) -> str:
    return f"{split}_{i:03d}"


def _save_png(path, img_u8):
    Image.fromarray(img_u8).save(path, format="PNG", optimize=False)


def generate_dataset(spec: SynthSceneSpec, out_dir) -> Path:
    """Write a complete dataset to ``out_dir``; identical specs give identical bytes."""
    out = Path(out_dir)
    for sub in ("images", "gt_masks", "cues"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rngs = _streams(spec.seed)
    train_cams, test_cams = make_cameras(spec, rngs["cameras"])
    oracle = make_oracle_cloud(spec, rngs["oracle"], train_cams)
    gains, offsets = _lighting(spec, rngs["lighting"], len(train_cams))

    depth_maps, cover_maps, train_imgs, fractions = [], [], [], []
    for cam in train_cams:
        d, c = expected_depth(oracle, cam)
        depth_maps.append(d)
        cover_maps.append(c)

    for i, cam in enumerate(train_cams):
        clean = rasterize(oracle, cam).clamped
        lit = np.clip(clean * gains[i] + offsets[i], 0.0, 1.0)
        lit = quantize(lit).astype(np.float64) / 255.0
        corrupted, mask, inst = inject_distractors(lit, spec.distractor_ratio, rngs["distractors"])
        img_u8 = quantize(corrupted)
        train_imgs.append(img_u8)
        fractions.append(float(1.0 - mask.mean()))
        name = view_name("train", i)
        _save_png(out / "images" / f"{name}.png", img_u8)
        _save_png(out / "gt_masks" / f"{name}.png", (mask * 255).astype(np.uint8))
        corr = correspondence_counts(oracle, train_cams, depth_maps, cover_maps, i)
        corr[mask == 0] = 0
        feats = builtin_feature_embed(img_u8.astype(np.float64) / 255.0, spec.feature_stride)
        CueBundle(feats, segment_map(inst), corr).save(out / "cues", name)

    for i, cam in enumerate(test_cams):
        _save_png(out / "images" / f"{view_name('test', i)}.png", quantize(rasterize(oracle, cam).clamped))

    write_tensor(out / "init_points.ten", _init_points(spec, oracle, train_cams, train_imgs, rngs["points"]))
    cameras = {"train": [dict(name=view_name("train", i), **c.to_dict()) for i, c in enumerate(train_cams)],
               "test": [dict(name=view_name("test", i), **c.to_dict()) for i, c in enumerate(test_cams)]}
    (out / "cameras.json").write_text(json.dumps(cameras, indent=1, sort_keys=True))
    meta = {"format_version": FORMAT_VERSION, "spec": asdict(spec), "extent": scene_extent(train_cams),
            "lighting_gain": gains.tolist(), "lighting_offset": offsets.tolist(),
            "corrupted_fraction": fractions}
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return out


def _init_points(spec, oracle, cams, imgs, rng) -> np.ndarray:
    """(P, 6) rows of xyz + rgb: jittered oracle centres, coloured from the
    first training image they project into."""
    k = spec.points_per_gaussian
    sigma = spec.init_jitter * scene_extent(cams)
    pos = np.repeat(oracle.position.astype(np.float64), k, axis=0)
    pos = pos + rng.normal(0.0, sigma, pos.shape)
    rgb = np.full((len(pos), 3), 0.5)
    done = np.zeros(len(pos), dtype=bool)
    for cam, img in zip(cams, imgs):
        t = cam.world_to_camera(pos)
        z = np.where(t[:, 2] > cam.near, t[:, 2], 1.0)
        u = np.rint(cam.fx * t[:, 0] / z + cam.cx).astype(np.int64)
        v = np.rint(cam.fy * t[:, 1] / z + cam.cy).astype(np.int64)
        ok = ~done & (t[:, 2] > cam.near) & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        rgb[ok] = img[v[ok], u[ok]] / 255.0
        done |= ok
    return np.concatenate([pos, rgb], axis=1)


@dataclass
class Dataset:
    root: Path
    train_cameras: list
    test_cameras: list
    train_names: list
    test_names: list
    train_images: np.ndarray  # (V, H, W, 3) float in [0, 1]
    test_images: np.ndarray
    gt_masks: np.ndarray      # (V, H, W), 1 = static
    init_points: np.ndarray
    meta: dict

    @property
    def extent(self) -> float:
        return scene_extent(self.train_cameras)

    def cues(self, view: int) -> CueBundle:
        return CueBundle.load(self.root / "cues", self.train_names[view])

    def spec(self) -> SynthSceneSpec:
        return SynthSceneSpec(**self.meta["spec"])


def _load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def load_dataset(root) -> Dataset:
    root = Path(root)
    cams = json.loads((root / "cameras.json").read_text())
    meta = json.loads((root / "meta.json").read_text())
    train = [Camera.from_dict(c) for c in cams["train"]]
    test = [Camera.from_dict(c) for c in cams["test"]]
    tn = [c["name"] for c in cams["train"]]
    sn = [c["name"] for c in cams["test"]]
    H, W = train[0].height, train[0].width
    masks = []
    for n in tn:
        p = root / "gt_masks" / f"{n}.png"
        masks.append(np.asarray(Image.open(p), dtype=np.float64) / 255.0 if p.exists() else np.ones((H, W)))
    return Dataset(root, train, test, tn, sn,
                   np.stack([_load_png(root / "images" / f"{n}.png") for n in tn]),
                   np.stack([_load_png(root / "images" / f"{n}.png") for n in sn]) if sn else np.zeros((0, H, W, 3)),
                   np.stack(masks), read_tensor(root / "init_points.ten"), meta)


def oracle_cloud(spec: SynthSceneSpec) -> GaussianCloud:
    """Rebuild the oracle scene of ``spec`` without writing anything."""
    rngs = _streams(spec.seed)
    train, _ = make_cameras(spec, rngs["cameras"])
    return make_oracle_cloud(spec, rngs["oracle"], train)
