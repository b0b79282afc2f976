"""Two-stage optimization, density control, checkpointing and inference.

The coarse stage fits static geometry (Gaussian parameters only) with an L1
plus perceptual pyramid objective. The fine stage attaches the audio field
and decoders and adds the mask margin term, optimizing everything jointly.
All runs are bitwise deterministic under a fixed seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import tensor as T
from .audio import AudioFrameTrack, TemporalFilter, smooth_audio, window_audio
from .deform import DeformDecoder, apply_deformation
from .gaussians import GaussianCloud, init_cloud
from .losses import l1_loss, mask_margin_loss, perceptual_proxy
from .plane import AudioPlane, AudioPlaneConfig, assemble_feature
from .rasterizer import rasterize_arrays, rasterize_op
from .synthetic import BACKGROUND, scene_aabb

APCK_MAGIC = b"APCK"
APCK_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15


class TrainDivergence(RuntimeError):
    """Training hit a non-finite loss."""


@dataclass
class TrainConfig:
    seed: int = 0
    init_points: int = 1000
    sh_degree: int = 0
    scene_extent: float = 0.7
    coarse_iters: int = 3000
    fine_iters: int = 8000
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_gauss: float = 2.5e-3
    lr_field: float = 1e-3
    lambda_lpips: float = 0.05
    lambda_mask: float = 0.1
    margin: float = 0.2
    plane_res: int = 64
    feat_dim: int = 16
    scales: tuple = (1, 2, 3, 4)
    fusion: str = "concat"
    audio_dim: int = 29
    deform_color: bool = False
    densify: bool = True
    densify_interval: int = 500
    densify_quantile: float = 0.9
    densify_offset: float = 0.5
    prune_opacity: float = 0.005
    max_points_factor: float = 4.0
    holdout_fraction: float = 0.2
    log_every: int = 50
    threads: int = 1

    def plane_config(self):
        return AudioPlaneConfig(
            base_res=self.plane_res,
            channels=self.feat_dim,
            scales=tuple(self.scales),
            fusion=self.fusion,
        )

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = int(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        from .config import coerce_dataclass_kwargs

        kwargs = {}
        for line in text.strip().splitlines():
            key, _, val = line.partition("=")
            kwargs[key] = val
        return cls(**coerce_dataclass_kwargs(cls, kwargs))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adaptive-moment optimizer with per-group learning-rate schedules."""

    def __init__(self, groups):
        # groups: list of dicts {params, lr, lr_final (optional), steps (optional)}
        self.groups = groups
        self.state = {}
        for g in groups:
            for p in g["params"]:
                self.state[id(p)] = [np.zeros_like(p.data), np.zeros_like(p.data)]
        self.t = 0

    def group_lr(self, g):
        lr = g["lr"]
        if g.get("lr_final") and g.get("steps"):
            frac = min(self.t / max(g["steps"], 1), 1.0)
            lr = lr * (g["lr_final"] / g["lr"]) ** frac
        return lr

    def step(self):
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for g in self.groups:
            lr = self.group_lr(g)
            for p in g["params"]:
                if p.grad is None:
                    continue
                m, v = self.state[id(p)]
                grad = p.grad
                m *= ADAM_BETA1
                m += (1.0 - ADAM_BETA1) * grad
                v *= ADAM_BETA2
                v += (1.0 - ADAM_BETA2) * grad * grad
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)

    def zero_grad(self):
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def replace_param(self, old, new):
        """Swap a grown/pruned parameter, mapping moment rows via ``index``."""
        self.state[id(new)] = self.state.pop(id(old))
        for g in self.groups:
            g["params"] = [new if p is old else p for p in g["params"]]

    def reindex_param(self, p, keep_idx, n_new_rows):
        """Keep ``keep_idx`` moment rows, then append zero rows for clones."""
        m, v = self.state[id(p)]
        m2 = np.concatenate([m[keep_idx], np.zeros((n_new_rows,) + m.shape[1:], m.dtype)])
        v2 = np.concatenate([v[keep_idx], np.zeros((n_new_rows,) + v.shape[1:], v.dtype)])
        self.state[id(p)] = [m2, v2]


# ---------------------------------------------------------------------------
# model bundle + checkpoint format


class ModelBundle:
    """Cloud + field + decoders + filter + the config that built them."""

    def __init__(self, cloud, plane, decoder, filt, config, iteration=0):
        self.cloud = cloud
        self.plane = plane
        self.decoder = decoder
        self.filter = filt
        self.config = config
        self.iteration = iteration

    @classmethod
    def create(cls, config, aabb=None):
        if aabb is None:
            aabb = scene_aabb(config.scene_extent)
        cloud = init_cloud(config.init_points, config.seed, aabb, sh_degree=config.sh_degree)
        plane = AudioPlane.create(config.plane_config(), seed=config.seed + 1)
        decoder = DeformDecoder.create(
            plane.feature_width(),
            seed=config.seed + 2,
            deform_color=config.deform_color,
            position_bound=float(np.linalg.norm(aabb[1] - aabb[0])),
        )
        filt = TemporalFilter.create(config.audio_dim, config.feat_dim, seed=config.seed + 3)
        return cls(cloud, plane, decoder, filt, config)

    def field_parameters(self):
        return self.plane.parameters() + self.decoder.parameters() + self.filter.parameters()

    def save(self, path):
        blocks = []
        for p in self.field_parameters():
            blocks.append((p.name, p.data))
        agc = self.cloud.to_bytes()
        cfg = self.config.to_text().encode()
        with open(path, "wb") as f:
            f.write(APCK_MAGIC)
            f.write(struct.pack("<II", APCK_VERSION, self.iteration))
            f.write(struct.pack("<I", len(agc)))
            f.write(agc)
            f.write(struct.pack("<I", len(blocks)))
            for name, data in blocks:
                nb = name.encode()
                f.write(struct.pack("<I", len(nb)))
                f.write(nb)
                f.write(struct.pack("<I", data.ndim))
                f.write(struct.pack(f"<{data.ndim}I", *data.shape))
                f.write(data.astype("<f4").tobytes())
            f.write(struct.pack("<I", len(cfg)))
            f.write(cfg)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:4] != APCK_MAGIC:
            raise ValueError("not an APCK checkpoint")
        version, iteration = struct.unpack_from("<II", blob, 4)
        if version != APCK_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        off = 12
        (agc_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        cloud = GaussianCloud.from_bytes(blob[off : off + agc_len])
        off += agc_len
        (n_blocks,) = struct.unpack_from("<I", blob, off)
        off += 4
        blocks = {}
        for _ in range(n_blocks):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + nlen].decode()
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
            off += 4 * count
            blocks[name] = data.astype(np.float32)
        (cfg_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        config = TrainConfig.from_text(blob[off : off + cfg_len].decode())

        bundle = cls.create(config, aabb=cloud.aabb)
        bundle.cloud = cloud
        bundle.iteration = iteration
        for p in bundle.field_parameters():
            if p.name not in blocks:
                raise ValueError(f"checkpoint missing block {p.name}")
            p.data = blocks[p.name].copy()
        return bundle


# ---------------------------------------------------------------------------
# training loops


class FrameSampler:
    """Uniform sampling by fixed-seed epoch shuffles."""

    def __init__(self, indices, seed):
        self.indices = list(indices)
        self.rng = np.random.default_rng(seed)
        self.queue = []

    def next(self):
        if not self.queue:
            self.queue = list(self.rng.permutation(self.indices))
        return int(self.queue.pop())


def _loss_row(it, total, l1v, percv, maskv):
    return f"{it},{total!r},{l1v!r},{percv!r},{maskv!r}"


def _check_finite_loss(loss, it):
    val = float(loss.data)
    if not np.isfinite(val):
        raise TrainDivergence(f"non-finite loss at iteration {it}")
    return val


def coarse_loss(bundle, frame, cam):
    cloud = bundle.cloud
    out = rasterize_op(
        cloud.mu,
        cloud.quat,
        cloud.log_scale,
        cloud.sh,
        cloud.alpha_logit,
        None,
        cam,
        BACKGROUND,
        sh_degree=cloud.sh_degree,
    )
    img = T.narrow(out, 2, 0, 3)
    target = T.Tensor(frame)
    l1 = l1_loss(img, target)
    perc = perceptual_proxy(img, target)
    total = T.add(l1, T.mul(perc, bundle.config.lambda_lpips))
    return total, float(l1.data), float(perc.data)


def train_coarse(dataset, config, log_path=None):
    """Static-stage optimization of the Gaussian parameters only."""
    bundle = ModelBundle.create(config)
    opt = Adam(_coarse_groups(bundle, config))
    train_idx, _ = dataset.split_indices(config.holdout_fraction)
    sampler = FrameSampler(train_idx, config.seed + 17)
    log_rows = ["iteration,total,l1,perceptual,mask"]
    for it in range(1, config.coarse_iters + 1):
        t = sampler.next()
        total, l1v, percv = coarse_loss(bundle, dataset.frame(t), dataset.camera(t))
        val = _check_finite_loss(total, it)
        opt.zero_grad()
        total.backward()
        opt.step()
        bundle.cloud.clamp_positions()
        if it % config.log_every == 0 or it == config.coarse_iters:
            log_rows.append(_loss_row(it, val, l1v, percv, 0.0))
    bundle.iteration = config.coarse_iters
    if log_path:
        with open(log_path, "w") as f:
            f.write("\n".join(log_rows) + "\n")
    return bundle, log_rows


def _coarse_groups(bundle, config):
    cloud = bundle.cloud
    return [
        {
            "params": [cloud.mu],
            "lr": config.lr_position,
            "lr_final": config.lr_position_final,
            "steps": config.coarse_iters,
        },
        {
            "params": [cloud.quat, cloud.log_scale, cloud.sh, cloud.alpha_logit, cloud.d_logit],
            "lr": config.lr_gauss,
        },
    ]


def _fine_groups(bundle, config):
    cloud = bundle.cloud
    return [
        {
            "params": [cloud.mu],
            "lr": config.lr_position,
            "lr_final": config.lr_position_final,
            "steps": config.fine_iters,
        },
        {
            "params": [cloud.quat, cloud.log_scale, cloud.sh, cloud.alpha_logit, cloud.d_logit],
            "lr": config.lr_gauss,
        },
        {"params": bundle.field_parameters(), "lr": config.lr_field},
    ]


def fine_step_outputs(bundle, t, track, cam):
    """Deformed render + dynamism map for frame t (tape-recorded)."""
    cloud = bundle.cloud
    a = smooth_audio(window_audio(track, t), bundle.filter)
    feat = assemble_feature(cloud.normalized_positions(), a, bundle.plane)
    offsets, dyn = bundle.decoder.decode(feat)
    deformed = apply_deformation(cloud, offsets, dyn)
    out = rasterize_op(
        deformed.mu,
        deformed.quat,
        deformed.log_scale,
        deformed.sh,
        deformed.alpha_logit,
        dyn,
        cam,
        BACKGROUND,
        sh_degree=cloud.sh_degree,
    )
    h, w = cam.height, cam.width
    img = T.narrow(out, 2, 0, 3)
    gmap = T.reshape(T.narrow(out, 2, 4, 1), (h, w))
    return img, gmap


def fine_loss(bundle, dataset, t):
    img, gmap = fine_step_outputs(bundle, t, dataset.track, dataset.camera(t))
    target = T.Tensor(dataset.frame(t))
    l1 = l1_loss(img, target)
    perc = perceptual_proxy(img, target)
    cfg = bundle.config
    total = T.add(l1, T.mul(perc, cfg.lambda_lpips))
    maskv = 0.0
    if cfg.lambda_mask > 0:
        mterm = mask_margin_loss(gmap, T.Tensor(dataset.mask(t)), cfg.margin)
        total = T.add(total, T.mul(mterm, cfg.lambda_mask))
        maskv = float(mterm.data)
    return total, float(l1.data), float(perc.data), maskv


def train_fine(dataset, bundle, config, log_path=None):
    """Joint stage: Gaussians + field + decoders + filter, with the mask term."""
    bundle.config = config
    opt = Adam(_fine_groups(bundle, config))
    train_idx, _ = dataset.split_indices(config.holdout_fraction)
    sampler = FrameSampler(train_idx, config.seed + 31)
    log_rows = ["iteration,total,l1,perceptual,mask"]
    max_points = int(config.max_points_factor * bundle.cloud.n)
    grad_accum = np.zeros((bundle.cloud.n, 3), dtype=np.float64)
    norm_accum = np.zeros(bundle.cloud.n, dtype=np.float64)
    accum_count = 0
    for it in range(1, config.fine_iters + 1):
        t = sampler.next()
        total, l1v, percv, maskv = fine_loss(bundle, dataset, t)
        val = _check_finite_loss(total, it)
        opt.zero_grad()
        total.backward()
        if bundle.cloud.mu.grad is not None:
            grad_accum += bundle.cloud.mu.grad
            norm_accum += np.linalg.norm(bundle.cloud.mu.grad, axis=1)
            accum_count += 1
        opt.step()
        bundle.cloud.clamp_positions()
        if config.densify and it % config.densify_interval == 0 and it < config.fine_iters:
            adaptive_density(
                bundle, opt, grad_accum, norm_accum, max(accum_count, 1), config, max_points
            )
            grad_accum = np.zeros((bundle.cloud.n, 3), dtype=np.float64)
            norm_accum = np.zeros(bundle.cloud.n, dtype=np.float64)
            accum_count = 0
        if it % config.log_every == 0 or it == config.fine_iters:
            log_rows.append(_loss_row(it, val, l1v, percv, maskv))
    bundle.iteration = config.coarse_iters + config.fine_iters
    if log_path:
        with open(log_path, "w") as f:
            f.write("\n".join(log_rows) + "\n")
    return bundle, log_rows


def adaptive_density(bundle, opt, grad_accum, norm_accum, count, config, max_points):
    """Clone high-gradient points (offset along the mean gradient by half a
    scale) and prune near-transparent ones; point count stays capped."""
    cloud = bundle.cloud
    means = norm_accum / count
    opacity = 1.0 / (1.0 + np.exp(-cloud.alpha_logit.data))

    threshold = np.quantile(means, config.densify_quantile)
    clone_mask = means > threshold
    budget = max(0, max_points - cloud.n)
    clone_idx = np.nonzero(clone_mask)[0][:budget]

    keep_mask = opacity >= config.prune_opacity
    if not keep_mask.any():  # never drop below one point
        keep_mask[int(np.argmax(opacity))] = True
    keep_idx = np.nonzero(keep_mask)[0]

    if clone_idx.size == 0 and keep_idx.size == cloud.n:
        return

    mean_vec = grad_accum[clone_idx] / count
    norms = np.linalg.norm(mean_vec, axis=1, keepdims=True)
    directions = np.where(norms > 0, mean_vec / np.maximum(norms, 1e-12), 0.0)
    sigma = np.exp(cloud.log_scale.data[clone_idx]).mean(axis=1, keepdims=True)
    offsets = (config.densify_offset * sigma * directions).astype(cloud.mu.data.dtype)

    def rebuild(p, new_rows):
        data = np.concatenate([p.data[keep_idx], new_rows], axis=0)
        newp = T.Parameter(data, p.name)
        opt.reindex_param(p, keep_idx, new_rows.shape[0])
        opt.replace_param(p, newp)
        return newp

    cloud.mu = rebuild(cloud.mu, cloud.mu.data[clone_idx] + offsets)
    cloud.quat = rebuild(cloud.quat, cloud.quat.data[clone_idx])
    cloud.log_scale = rebuild(cloud.log_scale, cloud.log_scale.data[clone_idx])
    cloud.sh = rebuild(cloud.sh, cloud.sh.data[clone_idx])
    cloud.alpha_logit = rebuild(cloud.alpha_logit, cloud.alpha_logit.data[clone_idx])
    cloud.d_logit = rebuild(cloud.d_logit, cloud.d_logit.data[clone_idx])
    cloud.clamp_positions()


# ---------------------------------------------------------------------------
# inference + evaluation


def infer_frame(bundle, t, track, cam, with_dynamism=False):
    """Render one deformed frame without tape recording.

    With ``with_dynamism`` returns (color, dynamism map, alpha map).
    """
    with T.no_grad():
        cloud = bundle.cloud
        a = smooth_audio(window_audio(track, t), bundle.filter)
        feat = assemble_feature(cloud.normalized_positions(), a, bundle.plane)
        offsets, dyn = bundle.decoder.decode(feat)
        deformed = apply_deformation(cloud, offsets, dyn)
        out, _ = rasterize_arrays(
            deformed.mu.data,
            deformed.quat.data,
            deformed.log_scale.data,
            deformed.sh.data,
            deformed.alpha_logit.data,
            dyn.data,
            cam,
            BACKGROUND,
            sh_degree=cloud.sh_degree,
        )
    if with_dynamism:
        return out[:, :, 0:3], out[:, :, 4], out[:, :, 3]
    return out[:, :, 0:3]


def dynamism_localization(bundle, dataset, indices, alpha_floor=0.5):
    """Mean dynamism inside vs outside the mouth masks over foreground pixels.

    Background pixels composite no dynamism at all, so both means consider
    only pixels the model actually renders (alpha >= alpha_floor).
    Returns (mean_in, mean_out, ratio).
    """
    ins, outs = [], []
    for t in indices:
        _, gmap, amap = infer_frame(
            bundle, t, dataset.track, dataset.camera(t), with_dynamism=True
        )
        fg = amap >= alpha_floor
        m = dataset.mask(t) > 0.5
        if (m & fg).any():
            ins.append(float(gmap[m & fg].mean()))
        if (~m & fg).any():
            outs.append(float(gmap[~m & fg].mean()))
    mean_in = float(np.mean(ins)) if ins else 0.0
    mean_out = float(np.mean(outs)) if outs else 0.0
    ratio = mean_in / mean_out if mean_out > 0 else float("inf")
    return mean_in, mean_out, ratio


def infer(bundle, track, cameras, with_dynamism=False):
    """Deterministic frame sequence for an audio track + pose track."""
    if track.n_frames != len(cameras):
        raise ValueError("audio and pose tracks differ in length")
    return [
        infer_frame(bundle, t, track, cameras[t], with_dynamism=with_dynamism)
        for t in range(len(cameras))
    ]
