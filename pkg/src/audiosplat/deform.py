"""Deformation decoding: attribute-offset MLP and gated application.

Two small MLPs read the per-point audio-aware feature: one predicts the
attribute offsets (position via a tanh bound at 10% of the scene diagonal,
rotation, log-scale, optionally color and opacity), the other a scalar
dynamism gate in (0, 1) that scales every offset. Output layers are
zero-initialized so the deformation starts as the exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

POSITION_BOUND_FRACTION = 0.1
HIDDEN_D1 = 64
HIDDEN_D2 = 32


class Linear:
    def __init__(self, weight, bias):
        self.weight = weight
        self.bias = bias

    @classmethod
    def create(cls, rng, n_in, n_out, name, dtype, zero=False):
        if zero:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.uniform(-1.0, 1.0, (n_in, n_out)) / np.sqrt(n_in)
        b = np.zeros(n_out)
        return cls(
            T.Parameter(w.astype(dtype), f"{name}.w"),
            T.Parameter(b.astype(dtype), f"{name}.b"),
        )

    def __call__(self, x):
        return T.add(T.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


@dataclass
class DeformOffsets:
    """Per-point attribute offsets aligned with the Gaussian fields."""

    dmu: T.Tensor
    dquat: T.Tensor
    dlog_scale: T.Tensor
    dsh: T.Tensor | None = None
    dalpha_logit: T.Tensor | None = None

    def __iter__(self):
        yield self.dmu
        yield self.dquat
        yield self.dlog_scale
        if self.dsh is not None:
            yield self.dsh
        if self.dalpha_logit is not None:
            yield T.reshape(self.dalpha_logit, (self.dalpha_logit.data.shape[0], 1))


class DeformDecoder:
    """Offset head (2 x 64 hidden) and dynamism head (1 x 32 hidden)."""

    def __init__(self, layers1, layers2, deform_color, position_bound):
        self.layers1 = layers1
        self.layers2 = layers2
        self.deform_color = deform_color
        self.position_bound = float(position_bound)

    @classmethod
    def create(cls, feature_width, seed=0, dtype=np.float32, deform_color=False,
               position_bound=1.0, zero_init=True):
        rng = np.random.default_rng(seed)
        out_width = 14 if deform_color else 10  # dmu3 + dquat4 + dscale3 (+ dsh3 + dalpha1)
        layers1 = [
            Linear.create(rng, feature_width, HIDDEN_D1, "deform.d1.l0", dtype),
            Linear.create(rng, HIDDEN_D1, HIDDEN_D1, "deform.d1.l1", dtype),
            Linear.create(rng, HIDDEN_D1, out_width, "deform.d1.out", dtype, zero=zero_init),
        ]
        layers2 = [
            Linear.create(rng, feature_width, HIDDEN_D2, "deform.d2.l0", dtype),
            Linear.create(rng, HIDDEN_D2, 1, "deform.d2.out", dtype, zero=zero_init),
        ]
        if not zero_init:  # random output layers, used by gradient checks
            layers1[-1].weight.data[:] = rng.uniform(-0.4, 0.4, layers1[-1].weight.data.shape)
            layers2[-1].weight.data[:] = rng.uniform(-0.6, 0.6, layers2[-1].weight.data.shape)
        return cls(layers1, layers2, deform_color, position_bound)

    def parameters(self):
        out = []
        for layer in self.layers1 + self.layers2:
            out.extend(layer.parameters())
        return out

    def astype(self, dtype):
        def conv(layers):
            return [
                Linear(
                    T.Parameter(l.weight.data.astype(dtype), l.weight.name),
                    T.Parameter(l.bias.data.astype(dtype), l.bias.name),
                )
                for l in layers
            ]

        return DeformDecoder(conv(self.layers1), conv(self.layers2),
                             self.deform_color, self.position_bound)

    def decode(self, feat):
        """Feature rows -> (DeformOffsets, dynamism in (0,1))."""
        if feat.data.shape[1] != self.layers1[0].weight.data.shape[0]:
            raise T.ShapeError(
                f"feature width {feat.data.shape[1]} != decoder input "
                f"{self.layers1[0].weight.data.shape[0]}"
            )
        h = feat
        for layer in self.layers1[:-1]:
            h = T.tanh(layer(h))
        raw = self.layers1[-1](h)
        n = feat.data.shape[0]
        bound = POSITION_BOUND_FRACTION * self.position_bound
        dmu = T.mul(T.tanh(T.narrow(raw, 1, 0, 3)), bound)
        dquat = T.narrow(raw, 1, 3, 4)
        dscale = T.narrow(raw, 1, 7, 3)
        dsh = dalpha = None
        if self.deform_color:
            dsh = T.narrow(raw, 1, 10, 3)
            dalpha = T.reshape(T.narrow(raw, 1, 13, 1), (n,))

        h2 = T.tanh(self.layers2[0](feat))
        dyn = T.sigmoid(T.reshape(self.layers2[1](h2), (n,)))
        return DeformOffsets(dmu, dquat, dscale, dsh, dalpha), dyn


class DeformedCloud:
    """A pure view of a cloud with gated offsets applied; original untouched."""

    def __init__(self, mu, quat, log_scale, sh, alpha_logit, sh_degree, aabb):
        self.mu = mu
        self.quat = quat
        self.log_scale = log_scale
        self.sh = sh
        self.alpha_logit = alpha_logit
        self.sh_degree = sh_degree
        self.aabb = aabb

    @property
    def n(self):
        return self.mu.data.shape[0]


def apply_deformation(cloud, offsets, dyn):
    """G' = G + d * dG applied attribute-wise; rotation stays un-normalized
    here (it is normalized inside the covariance build)."""
    n = cloud.n
    if offsets.dmu.data.shape[0] != n or dyn.data.shape[0] != n:
        raise ValueError("offsets misaligned with cloud points")
    gate = T.reshape(dyn, (n, 1))
    mu = T.add(cloud.mu, T.mul(gate, offsets.dmu))
    quat = T.add(cloud.quat, T.mul(gate, offsets.dquat))
    log_scale = T.add(cloud.log_scale, T.mul(gate, offsets.dlog_scale))
    sh = cloud.sh
    alpha_logit = cloud.alpha_logit
    if offsets.dsh is not None:
        pad = cloud.sh.data.shape[1] - 3
        dsh = offsets.dsh
        if pad > 0:
            zeros = T.Tensor(np.zeros((n, pad), dtype=cloud.sh.data.dtype))
            dsh = T.concat([dsh, zeros], axis=1)
        sh = T.add(cloud.sh, T.mul(gate, dsh))
    if offsets.dalpha_logit is not None:
        alpha_logit = T.add(cloud.alpha_logit, T.mul(dyn, offsets.dalpha_logit))
    return DeformedCloud(mu, quat, log_scale, sh, alpha_logit, cloud.sh_degree, cloud.aabb)
