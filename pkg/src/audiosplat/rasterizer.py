"""Differentiable CPU splatting: projection + front-to-back alpha compositing.

Gaussians are globally depth-sorted (ties broken by point index, making the
sort total and runs deterministic), evaluated inside a 3-sigma bounding box
per splat, composited per pixel with a 0.99 alpha clip and a transmittance
early-exit at 1e-4. The same pass optionally composites a per-point scalar
payload (the dynamism weight) into a grayscale map.

The backward pass is hand-written: it replays splats back-to-front using the
stored per-splat transmittance and produces analytic gradients for every
Gaussian parameter and the payload. Correctness is enforced against central
finite differences (see gradcheck).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .gaussians import covariance_backward, covariance_from_rs, sh_color_backward, sh_to_color

NEAR_PLANE = 0.01
COV_DILATION = 0.3
ALPHA_CLIP = 0.99
T_EARLY_EXIT = 1e-4
BBOX_SIGMA = 3.0


@dataclass
class Camera:
    """Pinhole intrinsics plus a rigid world-to-camera transform.

    Camera frame: +x right, +y down, +z forward; pixel centers sit at
    integer coordinates with (cx, cy) the principal point.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        R = self.world_to_camera[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation block is not orthonormal")

    @property
    def rotation(self):
        return self.world_to_camera[:3, :3]

    @property
    def translation(self):
        return self.world_to_camera[:3, 3]

    @property
    def position(self):
        return -self.rotation.T @ self.translation


@dataclass
class RenderOutput:
    color: np.ndarray
    alpha: np.ndarray
    scalar_map: np.ndarray | None = None


@dataclass
class _RasterState:
    """Everything the backward pass needs to replay the composite."""

    cam: Camera
    background: np.ndarray
    sh_degree: int
    n: int
    dtype: np.dtype
    valid: np.ndarray
    order: np.ndarray
    t_cam: np.ndarray
    mean2d: np.ndarray
    conic: np.ndarray
    Sigma_aux: tuple
    M: np.ndarray
    Sigma: np.ndarray
    colors: np.ndarray
    color_aux: tuple
    opacity: np.ndarray
    alpha_logit: np.ndarray
    payload: np.ndarray
    dirs_norm: np.ndarray
    T_final: np.ndarray
    splats: list = field(default_factory=list)  # (idx, y0, x0, T_before, active_any)


def project_points(mu, cam):
    """World points to camera space; returns (t_cam, valid mask)."""
    R = cam.rotation.astype(mu.dtype)
    t = cam.translation.astype(mu.dtype)
    t_cam = mu @ R.T + t
    return t_cam, t_cam[:, 2] > NEAR_PLANE


def project_gaussians(mu, quat, log_scale, cam):
    """Project 3D Gaussians to screen-space splats.

    Returns dict with per-point mean2d, conic (inverse 2x2 covariance),
    cov2d, radius (3-sigma), depth, valid mask and the auxiliaries needed
    for the backward chain.
    """
    dtype = mu.dtype
    Sigma, Sigma_aux = covariance_from_rs(quat, log_scale)
    t_cam, valid = project_points(mu, cam)
    tz = np.where(valid, t_cam[:, 2], 1.0)
    tx, ty = t_cam[:, 0], t_cam[:, 1]

    n = mu.shape[0]
    J = np.zeros((n, 2, 3), dtype=dtype)
    J[:, 0, 0] = cam.fx / tz
    J[:, 0, 2] = -cam.fx * tx / tz**2
    J[:, 1, 1] = cam.fy / tz
    J[:, 1, 2] = -cam.fy * ty / tz**2
    M = J @ cam.rotation.astype(dtype)
    cov2d = M @ Sigma @ np.transpose(M, (0, 2, 1))
    cov2d[:, 0, 0] += COV_DILATION
    cov2d[:, 1, 1] += COV_DILATION

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    det = np.maximum(det, 1e-12)
    conic = np.empty_like(cov2d)
    conic[:, 0, 0] = cov2d[:, 1, 1] / det
    conic[:, 1, 1] = cov2d[:, 0, 0] / det
    conic[:, 0, 1] = conic[:, 1, 0] = -cov2d[:, 0, 1] / det

    mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = BBOX_SIGMA * np.sqrt(lam_max)

    mean2d = np.stack([cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy], axis=1)
    return {
        "mean2d": mean2d,
        "cov2d": cov2d,
        "conic": conic,
        "radius": radius,
        "depth": t_cam[:, 2],
        "valid": valid,
        "t_cam": t_cam,
        "M": M,
        "Sigma": Sigma,
        "Sigma_aux": Sigma_aux,
    }


def _view_directions(mu, cam):
    v = mu - cam.position.astype(mu.dtype)
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    norm = np.maximum(norm, 1e-12)
    return v / norm, norm


def _splat_quad(mean2d_i, conic_i, y0, y1, x0, x1, dtype):
    xs = np.arange(x0, x1 + 1, dtype=dtype) - mean2d_i[0]
    ys = np.arange(y0, y1 + 1, dtype=dtype) - mean2d_i[1]
    dx = xs[None, :]
    dy = ys[:, None]
    q = conic_i[0, 0] * dx * dx + 2.0 * conic_i[0, 1] * dx * dy + conic_i[1, 1] * dy * dy
    return dx, dy, q


class _SplatRecord:
    """Per-splat forward state replayed by the backward pass."""

    __slots__ = ("idx", "y0", "x0", "T_before", "alpha", "wgt")

    def __init__(self, idx, y0, x0, T_before, alpha, wgt):
        self.idx = idx
        self.y0 = y0
        self.x0 = x0
        self.T_before = T_before
        self.alpha = alpha
        self.wgt = wgt


def rasterize_arrays(
    mu,
    quat,
    log_scale,
    sh,
    alpha_logit,
    payload,
    cam,
    background,
    sh_degree=0,
    retain_state=False,
):
    """Forward splatting over raw arrays.

    Returns (out, state) with out shaped (H, W, 5): rgb, accumulated alpha,
    and the composited scalar payload map. ``state`` is None unless
    ``retain_state`` (needed for the backward pass).
    """
    dtype = mu.dtype
    n = mu.shape[0]
    H, W = cam.height, cam.width
    for name, arr in (("mu", mu), ("quat", quat), ("log_scale", log_scale),
                      ("sh", sh), ("alpha_logit", alpha_logit), ("payload", payload)):
        if arr is not None and not np.all(np.isfinite(arr)):
            raise T.NonFiniteError(f"non-finite Gaussian input '{name}'")
    proj = project_gaussians(mu, quat, log_scale, cam)
    if not np.all(np.isfinite(proj["radius"][proj["valid"]])):
        raise T.NonFiniteError("non-finite projected extent (degenerate covariance)")
    dirs, dirs_norm = _view_directions(mu, cam)
    colors, color_aux = sh_to_color(sh, dirs, sh_degree)
    opacity = 1.0 / (1.0 + np.exp(-alpha_logit))
    if payload is None:
        payload = np.zeros(n, dtype=dtype)

    order_all = np.argsort(proj["depth"], kind="stable")
    order = order_all[proj["valid"][order_all]]

    Timg = np.ones((H, W), dtype=dtype)
    color_img = np.zeros((H, W, 3), dtype=dtype)
    gmap = np.zeros((H, W), dtype=dtype)
    splats = []

    mean2d = proj["mean2d"]
    conic = proj["conic"]
    radius = proj["radius"]
    mean_list = mean2d.tolist()
    radius_list = radius.tolist()
    for i in order:
        mx, my = mean_list[i]
        r = radius_list[i]
        x0 = max(0, int(np.ceil(mx - r)))
        x1 = min(W - 1, int(np.floor(mx + r)))
        y0 = max(0, int(np.ceil(my - r)))
        y1 = min(H - 1, int(np.floor(my + r)))
        if x0 > x1 or y0 > y1:
            continue
        _, _, q = _splat_quad(mean2d[i], conic[i], y0, y1, x0, x1, dtype)
        wgt = np.exp(-0.5 * q)
        alpha = np.minimum(opacity[i] * wgt, ALPHA_CLIP)
        view = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        Tb = Timg[view]
        if retain_state:
            Tb = Tb.copy()  # snapshot BEFORE the in-place transmittance update
            splats.append(_SplatRecord(int(i), y0, x0, Tb, alpha, wgt))
        if np.all(Tb >= T_EARLY_EXIT):
            contrib = alpha * Tb
            Timg[view] = Tb * (1.0 - alpha)
        else:
            active = Tb >= T_EARLY_EXIT
            contrib = alpha * Tb * active
            Timg[view] = np.where(active, Tb * (1.0 - alpha), Tb)
        color_img[view] += contrib[:, :, None] * colors[i]
        gmap[view] += contrib * payload[i]

    color_img += background.astype(dtype) * Timg[:, :, None]
    out = np.concatenate(
        [color_img, (1.0 - Timg)[:, :, None], gmap[:, :, None]], axis=2
    )
    state = None
    if retain_state:
        state = _RasterState(
            cam=cam,
            background=np.asarray(background, dtype=dtype),
            sh_degree=sh_degree,
            n=n,
            dtype=dtype,
            valid=proj["valid"],
            order=order,
            t_cam=proj["t_cam"],
            mean2d=mean2d,
            conic=conic,
            Sigma_aux=proj["Sigma_aux"],
            M=proj["M"],
            Sigma=proj["Sigma"],
            colors=colors,
            color_aux=color_aux,
            opacity=opacity,
            alpha_logit=alpha_logit,
            payload=payload,
            dirs_norm=dirs_norm,
            T_final=Timg,
            splats=splats,
        )
    return out, state


def rasterize_backward(state, d_out):
    """Analytic gradients of the composite w.r.t. every Gaussian input.

    Returns dict with keys mu, quat, log_scale, sh, alpha_logit, payload.
    """
    cam = state.cam
    dtype = state.dtype
    n = state.n
    g_rgb = d_out[:, :, 0:3]
    g_alpha = d_out[:, :, 3]
    g_g = d_out[:, :, 4]

    d_mean2d = np.zeros((n, 2), dtype=dtype)
    d_conic = np.zeros((n, 2, 2), dtype=dtype)
    d_colors = np.zeros((n, 3), dtype=dtype)
    d_opacity = np.zeros(n, dtype=dtype)
    d_payload = np.zeros(n, dtype=dtype)

    # suffix accumulator: d(loss)/dT_end * T_end, grown back-to-front
    dT_end = g_rgb @ state.background - g_alpha
    S = dT_end * state.T_final

    colors = state.colors
    payload = state.payload
    opacity = state.opacity
    for rec in reversed(state.splats):
        idx = rec.idx
        Tb, alpha, wgt = rec.T_before, rec.alpha, rec.wgt
        h, w = Tb.shape
        y0, x0 = rec.y0, rec.x0
        view = (slice(y0, y0 + h), slice(x0, x0 + w))
        g_rgb_v = g_rgb[view]
        g_g_v = g_g[view]

        aT = alpha * Tb
        g_pix = g_rgb_v @ colors[idx] + g_g_v * payload[idx]
        d_alpha = g_pix * Tb - S[view] / (1.0 - alpha)
        if not np.all(Tb >= T_EARLY_EXIT):
            active = Tb >= T_EARLY_EXIT
            aT *= active
            d_alpha *= active

        flat_aT = aT.ravel()
        d_colors[idx] = g_rgb_v.reshape(-1, 3).T @ flat_aT
        d_payload[idx] = g_g_v.ravel() @ flat_aT

        S[view] = S[view] + g_pix * aT

        d_raw = d_alpha * (opacity[idx] * wgt < ALPHA_CLIP)
        d_opacity[idx] = d_raw.ravel() @ wgt.ravel()
        d_q = d_raw * (-0.5 * opacity[idx]) * wgt
        dx, dy, _ = _splat_quad(state.mean2d[idx], state.conic[idx], y0, y0 + h - 1, x0, x0 + w - 1, dtype)
        ca, cb, cc = state.conic[idx, 0, 0], state.conic[idx, 0, 1], state.conic[idx, 1, 1]
        # separable moments: dx varies along columns, dy along rows
        dq_rows = d_q.sum(axis=1)
        dq_cols = d_q.sum(axis=0)
        dxv = dx.ravel()
        dyv = dy.ravel()
        sum_qx = dq_cols @ dxv
        sum_qy = dq_rows @ dyv
        d_mean2d[idx, 0] = -2.0 * (ca * sum_qx + cb * sum_qy)
        d_mean2d[idx, 1] = -2.0 * (cb * sum_qx + cc * sum_qy)
        d_conic[idx, 0, 0] = dq_cols @ (dxv * dxv)
        d_conic[idx, 1, 1] = dq_rows @ (dyv * dyv)
        off = dyv @ (d_q @ dxv)
        d_conic[idx, 0, 1] = off
        d_conic[idx, 1, 0] = off

    # conic = inv(cov2d): d_cov2d = -conic @ d_conic @ conic
    d_cov2d = -state.conic @ d_conic @ state.conic
    # cov2d = M Sigma M^T + dilation
    d_Sigma = np.transpose(state.M, (0, 2, 1)) @ d_cov2d @ state.M
    d_M = (d_cov2d + np.transpose(d_cov2d, (0, 2, 1))) @ state.M @ state.Sigma
    Wr = cam.rotation.astype(dtype)
    d_J = d_M @ Wr.T

    t = state.t_cam
    tx, ty = t[:, 0], t[:, 1]
    tz = np.where(state.valid, t[:, 2], 1.0)
    d_t = np.zeros((n, 3), dtype=dtype)
    # mean2d = (fx tx/tz + cx, fy ty/tz + cy)
    d_t[:, 0] += d_mean2d[:, 0] * cam.fx / tz
    d_t[:, 1] += d_mean2d[:, 1] * cam.fy / tz
    d_t[:, 2] += -d_mean2d[:, 0] * cam.fx * tx / tz**2 - d_mean2d[:, 1] * cam.fy * ty / tz**2
    # J entries
    d_t[:, 2] += -cam.fx / tz**2 * d_J[:, 0, 0] - cam.fy / tz**2 * d_J[:, 1, 1]
    d_t[:, 0] += -cam.fx / tz**2 * d_J[:, 0, 2]
    d_t[:, 2] += 2.0 * cam.fx * tx / tz**3 * d_J[:, 0, 2]
    d_t[:, 1] += -cam.fy / tz**2 * d_J[:, 1, 2]
    d_t[:, 2] += 2.0 * cam.fy * ty / tz**3 * d_J[:, 1, 2]
    d_t *= state.valid[:, None]

    d_mu = d_t @ Wr

    d_sh, d_dirs = sh_color_backward(state.color_aux, d_colors)
    if state.sh_degree >= 1:
        dirs = state.color_aux[1]
        inner = np.sum(d_dirs * dirs, axis=1, keepdims=True)
        d_mu = d_mu + (d_dirs - dirs * inner) / state.dirs_norm

    d_quat, d_log_scale = covariance_backward(state.Sigma_aux, d_Sigma * state.valid[:, None, None])
    d_alpha_logit = d_opacity * opacity * (1.0 - opacity)

    return {
        "mu": d_mu.astype(dtype),
        "quat": d_quat.astype(dtype),
        "log_scale": d_log_scale.astype(dtype),
        "sh": d_sh,
        "alpha_logit": d_alpha_logit,
        "payload": d_payload,
    }


def rasterize_op(mu_t, quat_t, log_scale_t, sh_t, alpha_logit_t, payload_t, cam, background, sh_degree=0):
    """Tape primitive: differentiable splatting to an (H, W, 5) image.

    Channels: rgb(3), accumulated alpha(1), scalar payload map(1). The
    payload input is the already-activated dynamism weight per point.
    """
    payload_data = None if payload_t is None else payload_t.data
    out, state = rasterize_arrays(
        mu_t.data,
        quat_t.data,
        log_scale_t.data,
        sh_t.data,
        alpha_logit_t.data,
        payload_data,
        cam,
        np.asarray(background, dtype=mu_t.data.dtype),
        sh_degree=sh_degree,
        retain_state=True,
    )
    parents = [mu_t, quat_t, log_scale_t, sh_t, alpha_logit_t]
    if payload_t is not None:
        parents.append(payload_t)

    def vjp(g):
        grads = rasterize_backward(state, g)
        out_grads = [
            grads["mu"],
            grads["quat"],
            grads["log_scale"],
            grads["sh"],
            grads["alpha_logit"],
        ]
        if payload_t is not None:
            out_grads.append(grads["payload"])
        return tuple(out_grads)

    return T._node(out, "rasterize", tuple(parents), vjp)


def render(cloud, cam, background, payload=None):
    """Fast-path render (no tape): RenderOutput with color, alpha and the
    payload map when one is supplied."""
    out, _ = rasterize_arrays(
        cloud.mu.data,
        cloud.quat.data,
        cloud.log_scale.data,
        cloud.sh.data,
        cloud.alpha_logit.data,
        payload,
        cam,
        np.asarray(background, dtype=cloud.mu.data.dtype),
        sh_degree=cloud.sh_degree,
    )
    scalar = out[:, :, 4] if payload is not None else None
    return RenderOutput(color=out[:, :, 0:3], alpha=out[:, :, 3], scalar_map=scalar)


def splat_scalar(cloud, weights, cam):
    """Composite per-point scalars with render's exact weights (background 0)."""
    weights = np.asarray(weights, dtype=cloud.mu.data.dtype)
    if weights.shape != (cloud.n,):
        raise ValueError("weights length must match point count")
    out, _ = rasterize_arrays(
        cloud.mu.data,
        cloud.quat.data,
        cloud.log_scale.data,
        cloud.sh.data,
        cloud.alpha_logit.data,
        weights,
        cam,
        np.zeros(3, dtype=cloud.mu.data.dtype),
        sh_degree=cloud.sh_degree,
    )
    return out[:, :, 4]
