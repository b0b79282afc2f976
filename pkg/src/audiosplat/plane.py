"""Factorized audio-conditioned feature field.

Per scale s the field stores three spatial planes (XY, XZ, YZ at sH x sH),
three spatial line grids (X, Y, Z at sH) and one audio prototype grid
(sH rows) shared by the three audio-conditioned pairings within that scale.
A point feature combines, per (plane, line) triple, the bilinear plane
sample with the line sample modulated element-wise by the attended audio
vector; triples and scales are concatenated channel-wise.

The attended audio vector is single-query cross-attention with the smoothed
audio condition as query and the prototype grid as both key and value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

#: (plane axes, line axis) index triples: XY+Z, XZ+Y, YZ+X.
TRIPLES = ((0, 1, 2), (0, 2, 1), (1, 2, 0))
FUSION_MODES = ("multiply", "add", "concat")


@dataclass
class AudioPlaneConfig:
    base_res: int = 64
    channels: int = 16
    scales: tuple = (1, 2, 3, 4)
    fusion: str = "concat"

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        self.scales = tuple(int(s) for s in self.scales)


class AudioPlane:
    """Multi-resolution bundle of planes, lines and audio prototype grids."""

    def __init__(self, config, planes, lines, protos):
        self.config = config
        self.planes = planes  # list over scales of [xy, xz, yz] Parameters
        self.lines = lines  # list over scales of [x, y, z] Parameters
        self.protos = protos  # list over scales of Parameters

    @classmethod
    def create(cls, config, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        d = config.channels
        planes, lines, protos = [], [], []
        plane_names = ("xy", "xz", "yz")
        line_names = ("x", "y", "z")
        for s in config.scales:
            res = s * config.base_res
            planes.append(
                [
                    T.Parameter(
                        rng.uniform(-1e-2, 1e-2, (res, res, d)).astype(dtype),
                        f"plane.s{s}.{nm}",
                    )
                    for nm in plane_names
                ]
            )
            lines.append(
                [
                    T.Parameter(
                        rng.uniform(-1e-2, 1e-2, (res, d)).astype(dtype),
                        f"line.s{s}.{nm}",
                    )
                    for nm in line_names
                ]
            )
            protos.append(
                T.Parameter(rng.uniform(-0.5, 0.5, (res, d)).astype(dtype), f"proto.s{s}")
            )
        return cls(config, planes, lines, protos)

    def parameters(self):
        out = []
        for ps, ls, a in zip(self.planes, self.lines, self.protos):
            out.extend(ps)
            out.extend(ls)
            out.append(a)
        return out

    def astype(self, dtype):
        clone = AudioPlane(
            self.config,
            [[T.Parameter(p.data.astype(dtype), p.name) for p in ps] for ps in self.planes],
            [[T.Parameter(l.data.astype(dtype), l.name) for l in ls] for ls in self.lines],
            [T.Parameter(a.data.astype(dtype), a.name) for a in self.protos],
        )
        return clone

    def feature_width(self):
        per_triple = 2 * self.config.channels if self.config.fusion == "concat" else self.config.channels
        return len(self.config.scales) * len(TRIPLES) * per_triple


def sample_plane(plane, u, v):
    """Bilinear plane lookup at scalar coordinate arrays u, v in [0,1]."""
    uv = np.stack([np.asarray(u), np.asarray(v)], axis=-1)
    return T.plane_sample(plane, T.Tensor(uv))


def sample_line(line, u):
    return T.line_sample(line, T.Tensor(np.asarray(u)))


def audio_attend(a, proto):
    """Single-query cross-attention: softmax(a . A^T / sqrt(D)) @ A."""
    d = proto.data.shape[1] if isinstance(proto, T.Tensor) else proto.shape[1]
    scores = T.mul(T.matmul(a, T.transpose2d(proto)), 1.0 / np.sqrt(d))
    weights = T.softmax(scores, axis=-1)
    return T.matmul(weights, proto)


def attention_weights(a, proto):
    """Attention distribution over prototype rows (numpy, for diagnostics)."""
    d = proto.data.shape[1]
    scores = a.data @ proto.data.T / np.sqrt(d)
    e = np.exp(scores - scores.max())
    return e / e.sum()


def assemble_feature(points, a, ap):
    """Audio-aware feature for N normalized points; shape (N, feature_width).

    ``points`` is an (N, 3) Tensor (or array) in [0,1]^3 and ``a`` the
    smoothed audio condition (D,). Per scale and triple the spatial plane
    sample is fused with line_sample * attended_audio according to the
    configured fusion mode, then everything concatenates channel-wise
    (scale-major, triple order XY+Z, XZ+Y, YZ+X).
    """
    if not isinstance(points, T.Tensor):
        points = T.Tensor(np.asarray(points))
    fusion = ap.config.fusion
    n = points.data.shape[0]
    cols = [T.narrow(points, 1, i, 1) for i in range(3)]  # (N, 1) each
    parts = []
    for planes_s, lines_s, proto_s in zip(ap.planes, ap.lines, ap.protos):
        f_audio = audio_attend(a, proto_s)
        for (i, j, k), plane_p in zip(TRIPLES, planes_s):
            uv = T.concat([cols[i], cols[j]], axis=1)
            p_spatial = T.plane_sample(plane_p, uv)
            f_line = T.line_sample(lines_s[k], T.reshape(cols[k], (n,)))
            t_audio = T.mul(f_line, f_audio)
            if fusion == "multiply":
                parts.append(T.mul(p_spatial, t_audio))
            elif fusion == "add":
                parts.append(T.add(p_spatial, t_audio))
            else:
                parts.append(T.concat([p_spatial, t_audio], axis=1))
    return T.concat(parts, axis=1)


def param_count(base_res, channels, scales=(1, 2, 3, 4), variant="audioplane", t_res=None):
    """Learnable element counts for the three 4D-field layouts.

    dense4d stores the full spatial x time grid; sixplane adds three
    time-conditioned planes per scale to the tri-plane; audioplane replaces
    them with per-axis line grids plus one prototype grid per scale.
    """
    h, d = int(base_res), int(channels)
    if variant == "dense4d":
        if t_res is None:
            raise ValueError("dense4d needs a time resolution")
        return h**3 * int(t_res) * d
    if variant == "sixplane":
        if t_res is None:
            raise ValueError("sixplane needs a time resolution")
        return sum(3 * (s * h) ** 2 * d + 3 * (s * h) * int(t_res) * d for s in scales)
    if variant == "audioplane":
        return sum(3 * (s * h) ** 2 * d + 3 * (s * h) * d + (s * h) * d for s in scales)
    raise ValueError(f"unknown variant '{variant}'")
