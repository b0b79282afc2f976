"""Procedural "talking" dataset: an animated Gaussian ground truth scene.

The scene is itself a Gaussian-splat render, so the trained model family can
represent the target exactly: a sphere head of skin-toned points plus a dark
mouth ring whose vertical aperture follows a hidden scalar driving signal.
Audio feature rows encode the driving signal linearly (plus noise) without
exposing it; frames, dilated mouth masks, orbit poses and the hidden signal
are written to a directory the trainer and evaluator consume.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .audio import AudioFrameTrack
from .gaussians import GaussianCloud, inverse_sigmoid
from .imgio import read_mask_png, read_png, write_png
from .losses import pearson, roi_intensity
from .rasterizer import Camera, rasterize_arrays
from .scenes import look_at_camera

BACKGROUND = np.zeros(3, dtype=np.float32)
HEAD_RADIUS = 0.5
MOUTH_HALF_WIDTH = 0.16
APERTURE_MIN = 0.02
APERTURE_MAX = 0.18
MASK_ALPHA_THRESHOLD = 0.05
MASK_DILATION_BASE = 5  # pixels at 64x64, scales linearly with resolution


@dataclass
class SceneSpec:
    head_points: int = 400
    mouth_points: int = 100
    frames: int = 250
    resolution: int = 64
    orbit_deg: float = 15.0
    distance: float = 2.5
    fov_scale: float = 1.8
    audio_dim: int = 29
    frame_rate: float = 25.0
    noise_std: float = 0.1
    holdout_fraction: float = 0.2
    static: bool = False
    seed: int = 0

    def n_train(self):
        n_hold = int(round(self.frames * self.holdout_fraction))
        return self.frames - n_hold


@dataclass
class DrivingSignal:
    """Band-limited smooth scalar in [0,1]: 3 random-phase sinusoids."""

    u: np.ndarray

    @property
    def n(self):
        return self.u.shape[0]


def generate_driving(n_frames, seed):
    """Sum of 3 random-phase sinusoids (periods 10-50 frames) rescaled to [0,1]."""
    if n_frames < 3:
        raise ValueError("need at least 3 frames")
    rng = np.random.default_rng(seed)
    t = np.arange(n_frames, dtype=np.float64)
    periods = rng.uniform(10.0, 50.0, 3)
    phases = rng.uniform(0.0, 2.0 * np.pi, 3)
    u = np.zeros(n_frames)
    for p, ph in zip(periods, phases):
        u += np.sin(2.0 * np.pi * t / p + ph)
    lo, hi = u.min(), u.max()
    if hi - lo < 1e-9:  # degenerate draw; nudge deterministically
        u = 0.5 + 0.5 * np.sin(2.0 * np.pi * t / 25.0)
    else:
        u = (u - lo) / (hi - lo)
    return DrivingSignal(u=u)


def synth_audio_features(driving, audio_dim, seed, noise_std=0.1):
    """Mix [u, du, sin(2*pi*u), cos(2*pi*u)] through a fixed random matrix.

    The driving value is linearly decodable from noiseless rows but never
    appears as a raw channel.
    """
    if audio_dim < 2:
        raise ValueError("audio_dim must be >= 2")
    u = driving.u
    rng = np.random.default_rng(seed)
    mix = rng.normal(size=(audio_dim, 4))
    du = np.diff(u, prepend=u[0])
    basis = np.stack([u, du, np.sin(2 * np.pi * u), np.cos(2 * np.pi * u)], axis=1)
    feats = basis @ mix.T
    if noise_std > 0:
        feats = feats + noise_std * rng.normal(size=feats.shape)
    return AudioFrameTrack(feats.astype(np.float32), 25.0)


# ---------------------------------------------------------------------------
# ground-truth scene


def _fibonacci_sphere(n, rng):
    """Even sphere coverage with a small seeded jitter."""
    i = np.arange(n, dtype=np.float64)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    y = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(1.0 - y * y, 0.0))
    theta = golden * i + rng.normal(scale=0.03, size=n)
    y = np.clip(y + rng.normal(scale=0.01, size=n), -1.0, 1.0)
    r = np.sqrt(np.maximum(1.0 - y * y, 0.0))
    return np.stack([r * np.cos(theta), y, r * np.sin(theta)], axis=1)


class TruthScene:
    """Head + mouth ground-truth point arrays; mouth animates with u."""

    def __init__(self, spec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed + 11)
        nh, nm = spec.head_points, spec.mouth_points

        head_dirs = _fibonacci_sphere(nh, rng)
        self.head_mu = HEAD_RADIUS * head_dirs
        base = np.array([0.52, 0.44, 0.40])
        self.head_colors = np.clip(
            base + rng.uniform(-0.002, 0.002, (nh, 3)), 0.05, 0.95
        )
        self.head_scale = np.full((nh, 3), np.log(0.065))
        self.head_alpha = np.full(nh, 3.0)

        # mouth: bright filled ellipse patch on the lower front face whose
        # vertical half-extent follows the aperture, so the exposed bright
        # area (and the ROI intensity) rises monotonically with the driving
        self.mouth_normal = np.array([0.0, -0.18, 0.9837])
        self.mouth_normal /= np.linalg.norm(self.mouth_normal)
        self.mouth_center = 1.02 * HEAD_RADIUS * self.mouth_normal
        tx = np.cross(np.array([0.0, 1.0, 0.0]), self.mouth_normal)
        tx /= np.linalg.norm(tx)
        ty = np.cross(self.mouth_normal, tx)
        self.mouth_tx, self.mouth_ty = tx, ty
        # sunflower layout fills the unit disk evenly; the disk is squashed
        # vertically by the aperture each frame
        k = np.arange(nm, dtype=np.float64)
        self.mouth_disk_r = np.sqrt((k + 0.5) / nm)
        self.mouth_disk_phi = np.pi * (3.0 - np.sqrt(5.0)) * k
        self.mouth_colors = np.tile(np.array([0.95, 0.93, 0.90]), (nm, 1))
        self.mouth_scale = np.full((nm, 3), np.log(0.026))
        self.mouth_alpha = np.full(nm, 3.5)

    def aperture(self, u):
        return APERTURE_MIN + (APERTURE_MAX - APERTURE_MIN) * u

    def mouth_positions(self, u):
        ap = self.aperture(u)
        dx = MOUTH_HALF_WIDTH * self.mouth_disk_r * np.cos(self.mouth_disk_phi)
        dy = ap * self.mouth_disk_r * np.sin(self.mouth_disk_phi)
        off = np.outer(dx, self.mouth_tx) + np.outer(dy, self.mouth_ty)
        return self.mouth_center + off + 0.02 * self.mouth_normal

    def cloud_at(self, u, mouth_only=False):
        """GaussianCloud snapshot for driving value u (mouth ring opened)."""
        if mouth_only:
            mu = self.mouth_positions(u)
            colors, log_scale, alpha = self.mouth_colors, self.mouth_scale, self.mouth_alpha
        else:
            mu = np.concatenate([self.head_mu, self.mouth_positions(u)], axis=0)
            colors = np.concatenate([self.head_colors, self.mouth_colors], axis=0)
            log_scale = np.concatenate([self.head_scale, self.mouth_scale], axis=0)
            alpha = np.concatenate([self.head_alpha, self.mouth_alpha], axis=0)
        n = mu.shape[0]
        quat = np.zeros((n, 4))
        quat[:, 0] = 1.0
        sh = (colors - 0.5) / 0.28209479177387814
        f32 = np.float32
        return GaussianCloud(
            T.Parameter(mu.astype(f32), "gauss.mu"),
            T.Parameter(quat.astype(f32), "gauss.quat"),
            T.Parameter(log_scale.astype(f32), "gauss.log_scale"),
            T.Parameter(sh.astype(f32), "gauss.sh"),
            T.Parameter(alpha.astype(f32), "gauss.alpha_logit"),
            T.Parameter(np.zeros(n, dtype=f32), "gauss.d_logit"),
            aabb=scene_aabb(),
            sh_degree=0,
        )

    def camera(self, t):
        theta = self.spec.orbit_deg * np.sin(2.0 * np.pi * t / self.spec.frames)
        return look_at_camera(
            self.spec.resolution,
            self.spec.resolution,
            azimuth_deg=theta,
            distance=self.spec.distance,
            fov_scale=self.spec.fov_scale,
        )


def scene_aabb(extent=0.7):
    return np.array([[-extent, -extent, -extent], [extent, extent, extent]])


def render_truth(cloud, cam):
    out, _ = rasterize_arrays(
        cloud.mu.data,
        cloud.quat.data,
        cloud.log_scale.data,
        cloud.sh.data,
        cloud.alpha_logit.data,
        None,
        cam,
        BACKGROUND,
        sh_degree=0,
    )
    return out[:, :, 0:3], out[:, :, 3]


def dilate_binary(mask, radius):
    """Binary dilation with a disk structuring element."""
    out = mask.astype(bool)
    h, w = mask.shape
    result = np.zeros_like(out)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy * dy + dx * dx > radius * radius:
                continue
            ys = slice(max(0, dy), min(h, h + dy))
            yd = slice(max(0, -dy), min(h, h - dy))
            xs = slice(max(0, dx), min(w, w + dx))
            xd = slice(max(0, -dx), min(w, w - dx))
            result[yd, xd] |= out[ys, xs]
    return result.astype(np.float32)


def _camera_record(t, cam):
    return {
        "frame": int(t),
        "world_to_camera": [float(v) for v in cam.world_to_camera.reshape(-1)],
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
    }


def camera_from_record(rec):
    return Camera(
        fx=rec["fx"],
        fy=rec["fy"],
        cx=rec["cx"],
        cy=rec["cy"],
        world_to_camera=np.asarray(rec["world_to_camera"], dtype=np.float64).reshape(4, 4),
        width=int(rec["width"]),
        height=int(rec["height"]),
    )


def generate_dataset(spec, out_dir):
    """Write frames/, masks/, audio.aaf, poses.json and truth.json.

    The driving signal switches to a freshly seeded one for the held-out
    last 20% of frames so sync evaluation sees unseen dynamics. Returns a
    summary dict (also the generation-time sync sanity number).
    """
    os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    n_train = spec.n_train()
    n_hold = spec.frames - n_train
    if spec.static:
        u = np.zeros(spec.frames)
    else:
        u_train = generate_driving(n_train, spec.seed + 1).u
        u_hold = generate_driving(max(n_hold, 3), spec.seed + 7919).u[:n_hold]
        u = np.concatenate([u_train, u_hold])
    track = synth_audio_features(
        DrivingSignal(u=u), spec.audio_dim, spec.seed + 2, noise_std=spec.noise_std
    )
    track.frame_rate = spec.frame_rate
    track.save(os.path.join(out_dir, "audio.aaf"))

    scene = TruthScene(spec)
    radius = max(1, int(round(MASK_DILATION_BASE * spec.resolution / 64.0)))
    poses = []
    mask_boxes = []
    frames = []
    coverage = []
    face_interior = np.ones((spec.resolution, spec.resolution), dtype=bool)
    for t in range(spec.frames):
        cam = scene.camera(t)
        cloud = scene.cloud_at(u[t])
        color, alpha = render_truth(cloud, cam)
        write_png(os.path.join(out_dir, "frames", f"{t:05d}.png"), color)
        frames.append(color)
        face_interior &= alpha > 0.6

        mouth = scene.cloud_at(u[t], mouth_only=True)
        _, malpha = render_truth(mouth, cam)
        footprint = malpha > MASK_ALPHA_THRESHOLD
        mask = dilate_binary(footprint, radius)
        write_png(os.path.join(out_dir, "masks", f"{t:05d}.png"), mask)
        coverage.append(float(mask.mean()))
        ys, xs = np.nonzero(footprint)
        if ys.size:
            mask_boxes.append((ys.min(), ys.max(), xs.min(), xs.max()))
        poses.append(_camera_record(t, cam))

    with open(os.path.join(out_dir, "poses.json"), "w") as f:
        json.dump(poses, f)

    # the sync rectangle must contain the full bright footprint at every pose
    # (clipping a pose-sliding fringe leaks camera motion into the series)
    # and stay inside the face so the silhouette never enters it
    boxes = np.asarray(mask_boxes)
    pad = 2
    roi = (
        int(boxes[:, 0].min() - pad),
        int(boxes[:, 1].max() + 1 + pad),
        int(boxes[:, 2].min() - pad),
        int(boxes[:, 3].max() + 1 + pad),
    )
    rows = np.nonzero(face_interior.any(axis=1))[0]
    cols = np.nonzero(face_interior.any(axis=0))[0]
    if not spec.static and rows.size and cols.size:
        if roi[0] < rows.min() or roi[1] > rows.max() + 1 or roi[2] < cols.min() or roi[3] > cols.max() + 1:
            raise RuntimeError(
                "mouth footprint too close to the face silhouette for a clean "
                f"sync rectangle (roi={roi}, face rows {rows.min()}..{rows.max()}, "
                f"cols {cols.min()}..{cols.max()}); adjust the scene spec"
            )
    roi = (
        max(0, roi[0]),
        min(spec.resolution, roi[1]),
        max(0, roi[2]),
        min(spec.resolution, roi[3]),
    )
    sync_r = None
    if not spec.static:
        series = roi_intensity(frames[:n_train], roi)
        sync_r = pearson(series, u[:n_train])
    truth = {
        "u": [float(v) for v in u],
        "roi": list(roi),
        "n_train": n_train,
        "generation_sync_r": sync_r,
    }
    with open(os.path.join(out_dir, "truth.json"), "w") as f:
        json.dump(truth, f)
    return {
        "frames": spec.frames,
        "resolution": spec.resolution,
        "mask_coverage": float(np.mean(coverage)),
        "generation_sync_r": sync_r,
        "n_train": n_train,
    }


class SyntheticDataset:
    """Loader for the generated directory layout (truth is opt-in)."""

    def __init__(self, root, load_truth=False):
        self.root = root
        with open(os.path.join(root, "poses.json")) as f:
            self.pose_records = json.load(f)
        self.cameras = [camera_from_record(r) for r in self.pose_records]
        self.track = AudioFrameTrack.load(os.path.join(root, "audio.aaf"))
        self.n_frames = len(self.pose_records)
        self._frame_cache = {}
        self._mask_cache = {}
        self.truth = None
        if load_truth:
            with open(os.path.join(root, "truth.json")) as f:
                self.truth = json.load(f)

    def frame(self, t):
        if t not in self._frame_cache:
            self._frame_cache[t] = read_png(os.path.join(self.root, "frames", f"{t:05d}.png"))
        return self._frame_cache[t]

    def mask(self, t):
        if t not in self._mask_cache:
            self._mask_cache[t] = read_mask_png(os.path.join(self.root, "masks", f"{t:05d}.png"))
        return self._mask_cache[t]

    def camera(self, t):
        return self.cameras[t]

    def split_indices(self, holdout_fraction=0.2):
        n_hold = int(round(self.n_frames * holdout_fraction))
        n_train = self.n_frames - n_hold
        return list(range(n_train)), list(range(n_train, self.n_frames))
