"""3D Gaussian scene representation: parameters, covariance, color, file io.

Each point carries position, rotation quaternion, log-scales, SH color
coefficients (degree 0 by default, degree 1 optional), an opacity logit and
a dynamism logit. Log/logit parameterizations keep scales positive and
opacity/dynamism in (0, 1) without constrained optimization.
"""

from __future__ import annotations

import struct

import numpy as np

from . import tensor as T

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199

OPACITY_INIT = 0.1
AGC1_MAGIC = b"AGC1"


def inverse_sigmoid(y):
    return float(np.log(y / (1.0 - y)))


class GaussianCloud:
    """The optimizable point set plus the normalization box for field queries."""

    def __init__(self, mu, quat, log_scale, sh, alpha_logit, d_logit, aabb, sh_degree=0):
        self.mu = mu
        self.quat = quat
        self.log_scale = log_scale
        self.sh = sh
        self.alpha_logit = alpha_logit
        self.d_logit = d_logit
        self.aabb = np.asarray(aabb, dtype=np.float64).reshape(2, 3)
        self.sh_degree = int(sh_degree)
        if self.n < 1:
            raise ValueError("cloud needs at least one point")

    @property
    def n(self):
        return self.mu.data.shape[0]

    def parameters(self):
        return [self.mu, self.quat, self.log_scale, self.sh, self.alpha_logit, self.d_logit]

    def astype(self, dtype):
        fields = [T.Parameter(p.data.astype(dtype), p.name) for p in self.parameters()]
        return GaussianCloud(*fields, aabb=self.aabb.copy(), sh_degree=self.sh_degree)

    def normalized_positions(self):
        """Positions mapped into [0,1]^3 by the aabb, on the tape."""
        lo = self.aabb[0]
        span = self.aabb[1] - self.aabb[0]
        return T.mul(T.sub(self.mu, lo.astype(self.mu.data.dtype)), (1.0 / span).astype(self.mu.data.dtype))

    def clamp_positions(self):
        """Project positions back inside the aabb (called after optimizer steps)."""
        np.clip(self.mu.data, self.aabb[0], self.aabb[1], out=self.mu.data)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    def to_bytes(self):
        sh_width = 3 if self.sh_degree == 0 else 12
        parts = [AGC1_MAGIC, struct.pack("<IB", self.n, self.sh_degree)]
        per_point = np.concatenate(
            [
                self.mu.data.reshape(self.n, 3),
                self.quat.data.reshape(self.n, 4),
                self.log_scale.data.reshape(self.n, 3),
                self.sh.data.reshape(self.n, sh_width),
                self.alpha_logit.data.reshape(self.n, 1),
                self.d_logit.data.reshape(self.n, 1),
            ],
            axis=1,
        ).astype("<f4")
        parts.append(per_point.tobytes())
        parts.append(self.aabb.astype("<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob):
        if blob[:4] != AGC1_MAGIC:
            raise ValueError("not an AGC1 cloud block")
        n, degree = struct.unpack_from("<IB", blob, 4)
        sh_width = 3 if degree == 0 else 12
        stride = 3 + 4 + 3 + sh_width + 1 + 1
        offset = 9
        flat = np.frombuffer(blob, dtype="<f4", count=n * stride, offset=offset).reshape(n, stride)
        flat = flat.astype(np.float32)
        offset += n * stride * 4
        aabb = np.frombuffer(blob, dtype="<f4", count=6, offset=offset).reshape(2, 3)
        c = sh_width
        return cls(
            T.Parameter(flat[:, 0:3].copy(), "gauss.mu"),
            T.Parameter(flat[:, 3:7].copy(), "gauss.quat"),
            T.Parameter(flat[:, 7:10].copy(), "gauss.log_scale"),
            T.Parameter(flat[:, 10 : 10 + c].copy(), "gauss.sh"),
            T.Parameter(flat[:, 10 + c].copy(), "gauss.alpha_logit"),
            T.Parameter(flat[:, 11 + c].copy(), "gauss.d_logit"),
            aabb=aabb,
            sh_degree=degree,
        )

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def init_cloud(n, seed, aabb, sh_degree=0, dtype=np.float32):
    """Randomly initialized cloud: uniform positions, identity rotations,
    isotropic scales at diag/NMC(n) with NMC = cbrt, opacity 0.1, gray color."""
    if n < 1:
        raise ValueError("n must be >= 1")
    aabb = np.asarray(aabb, dtype=np.float64).reshape(2, 3)
    rng = np.random.default_rng(seed)
    mu = rng.uniform(aabb[0], aabb[1], size=(n, 3))
    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    diag = float(np.linalg.norm(aabb[1] - aabb[0]))
    scale = diag / float(n) ** (1.0 / 3.0)
    log_scale = np.full((n, 3), np.log(scale))
    sh_width = 3 if sh_degree == 0 else 12
    sh = np.zeros((n, sh_width))
    alpha_logit = np.full(n, inverse_sigmoid(OPACITY_INIT))
    d_logit = np.zeros(n)  # sigmoid(0) = 0.5
    return GaussianCloud(
        T.Parameter(mu.astype(dtype), "gauss.mu"),
        T.Parameter(quat.astype(dtype), "gauss.quat"),
        T.Parameter(log_scale.astype(dtype), "gauss.log_scale"),
        T.Parameter(sh.astype(dtype), "gauss.sh"),
        T.Parameter(alpha_logit.astype(dtype), "gauss.alpha_logit"),
        T.Parameter(d_logit.astype(dtype), "gauss.d_logit"),
        aabb=aabb,
        sh_degree=sh_degree,
    )


# ---------------------------------------------------------------------------
# covariance from rotation + scale


def quat_to_rotmat(qn):
    """Rotation matrices from unit quaternions (w, x, y, z), shape (N, 4)."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    R = np.empty(qn.shape[:1] + (3, 3), dtype=qn.dtype)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance_from_rs(quat, log_scale):
    """Sigma = R diag(s^2) R^T with s = exp(log_scale); quat normalized here.

    Returns (Sigma, aux) where aux feeds ``covariance_backward``.
    """
    norms = np.linalg.norm(quat, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero quaternion")
    qn = quat / norms[:, None]
    R = quat_to_rotmat(qn)
    sigma = np.exp(log_scale)
    N = R * sigma[:, None, :]  # R @ diag(sigma)
    Sigma = N @ np.transpose(N, (0, 2, 1))
    return Sigma, (quat, qn, norms, R, sigma, N)


def _rotmat_vjp(qn, dR):
    """d(loss)/d(unit quaternion) given d(loss)/dR, both batched."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    dw = 2 * (
        -z * dR[:, 0, 1] + y * dR[:, 0, 2] + z * dR[:, 1, 0] - x * dR[:, 1, 2]
        - y * dR[:, 2, 0] + x * dR[:, 2, 1]
    )
    dx = 2 * (
        y * dR[:, 0, 1] + z * dR[:, 0, 2] + y * dR[:, 1, 0] - 2 * x * dR[:, 1, 1]
        - w * dR[:, 1, 2] + z * dR[:, 2, 0] + w * dR[:, 2, 1] - 2 * x * dR[:, 2, 2]
    )
    dy = 2 * (
        -2 * y * dR[:, 0, 0] + x * dR[:, 0, 1] + w * dR[:, 0, 2] + x * dR[:, 1, 0]
        + z * dR[:, 1, 2] - w * dR[:, 2, 0] + z * dR[:, 2, 1] - 2 * y * dR[:, 2, 2]
    )
    dz = 2 * (
        -2 * z * dR[:, 0, 0] - w * dR[:, 0, 1] + x * dR[:, 0, 2] + w * dR[:, 1, 0]
        - 2 * z * dR[:, 1, 1] + y * dR[:, 1, 2] + x * dR[:, 2, 0] + y * dR[:, 2, 1]
    )
    return np.stack([dw, dx, dy, dz], axis=1)


def covariance_backward(aux, dSigma):
    """VJP of covariance_from_rs: returns (d_quat, d_log_scale)."""
    quat, qn, norms, R, sigma, N = aux
    dSym = dSigma + np.transpose(dSigma, (0, 2, 1))
    dN = dSym @ N
    dsigma = np.einsum("nik,nik->nk", R, dN)
    d_log_scale = dsigma * sigma
    dR = dN * sigma[:, None, :]
    dqn = _rotmat_vjp(qn, dR)
    # through normalization q / |q|
    dot = np.sum(dqn * qn, axis=1, keepdims=True)
    d_quat = (dqn - qn * dot) / norms[:, None]
    return d_quat, d_log_scale


def covariance_op(quat_t, log_scale_t):
    """Tape primitive wrapping covariance_from_rs."""
    Sigma, aux = covariance_from_rs(quat_t.data, log_scale_t.data)

    def vjp(g):
        return covariance_backward(aux, g)

    return T._node(Sigma, "covariance", (quat_t, log_scale_t), vjp)


# ---------------------------------------------------------------------------
# spherical-harmonic color


def sh_to_color(sh, dirs, degree):
    """Colors from SH coefficients: 0.5 + C0*dc (+ band-1 terms), clamped.

    Returns (colors, aux). ``dirs`` are unit view directions, used only at
    degree 1; degree-0 color is direction independent.
    """
    n = sh.shape[0]
    pre = 0.5 + SH_C0 * sh[:, 0:3]
    if degree >= 1:
        x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        pre = pre - SH_C1 * y * sh[:, 3:6] + SH_C1 * z * sh[:, 6:9] - SH_C1 * x * sh[:, 9:12]
    colors = np.clip(pre, 0.0, 1.0)
    inside = (pre > 0.0) & (pre < 1.0)
    return colors, (sh, dirs, degree, inside)


def sh_color_backward(aux, dcolor):
    """VJP of sh_to_color: returns (d_sh, d_dirs)."""
    sh, dirs, degree, inside = aux
    g = dcolor * inside
    dsh = np.zeros_like(sh)
    dsh[:, 0:3] = SH_C0 * g
    ddirs = np.zeros_like(dirs)
    if degree >= 1:
        x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        dsh[:, 3:6] = -SH_C1 * y * g
        dsh[:, 6:9] = SH_C1 * z * g
        dsh[:, 9:12] = -SH_C1 * x * g
        ddirs[:, 0] = np.sum(-SH_C1 * sh[:, 9:12] * g, axis=1)
        ddirs[:, 1] = np.sum(-SH_C1 * sh[:, 3:6] * g, axis=1)
        ddirs[:, 2] = np.sum(SH_C1 * sh[:, 6:9] * g, axis=1)
    return dsh, ddirs


def sh_color_op(sh_t, dirs, degree):
    """Tape primitive for SH color with fixed (non-differentiated) directions."""
    colors, aux = sh_to_color(sh_t.data, np.asarray(dirs, dtype=sh_t.data.dtype), degree)

    def vjp(g):
        dsh, _ = sh_color_backward(aux, g)
        return (dsh,)

    return T._node(colors, "sh_color", (sh_t,), vjp)
