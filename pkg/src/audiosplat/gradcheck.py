"""Gradient-check runners: primitive, module, and whole-pipeline scopes.

Each scope builds 64-bit scenes, runs ``finite_difference_check`` on them,
and reports the worst relative error. The pipeline scope drives the full
deformation + rasterization + loss chain end to end.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .audio import AudioFrameTrack, TemporalFilter, smooth_audio, window_audio
from .deform import DeformDecoder, apply_deformation
from .gaussians import GaussianCloud, covariance_op, init_cloud, sh_color_op
from .losses import l1_loss, mask_margin_loss, perceptual_proxy
from .plane import AudioPlane, AudioPlaneConfig, assemble_feature, audio_attend
from .rasterizer import Camera, rasterize_op
from .scenes import look_at_camera

_WEIGHT_SCALE = 0.7  # random linear readout keeps scalarized losses generic


def _scalarize(out, rng):
    w = T.Tensor(rng.uniform(-_WEIGHT_SCALE, _WEIGHT_SCALE, out.shape).astype(np.float64))
    return T.tsum(T.mul(out, w))


def _param(rng, shape, name, lo=-1.0, hi=1.0):
    return T.Parameter(rng.uniform(lo, hi, shape).astype(np.float64), name)


def primitive_cases(seed=0):
    """Yield (name, params, build_loss) finite-difference cases per primitive.

    Inputs are drawn away from the non-smooth points of relu/abs and away
    from interpolation cell edges so central differences are valid.
    """
    rng = np.random.default_rng(seed)
    cases = []

    def add_case(name, params, build):
        cases.append((name, params, build))

    a = _param(rng, (3, 4), "a")
    b = _param(rng, (3, 4), "b")
    add_case("add", [a, b], lambda a=a, b=b: _scalarize(T.add(a, b), np.random.default_rng(1)))
    add_case("sub", [a, b], lambda a=a, b=b: _scalarize(T.sub(a, b), np.random.default_rng(2)))
    add_case("neg", [a], lambda a=a: _scalarize(T.neg(a), np.random.default_rng(3)))
    add_case("mul", [a, b], lambda a=a, b=b: _scalarize(T.mul(a, b), np.random.default_rng(4)))

    bc = _param(rng, (4,), "bias")  # broadcast add/mul path
    add_case("add_broadcast", [a, bc], lambda a=a, bc=bc: _scalarize(T.add(a, bc), np.random.default_rng(5)))
    add_case("mul_broadcast", [a, bc], lambda a=a, bc=bc: _scalarize(T.mul(a, bc), np.random.default_rng(6)))

    m1 = _param(rng, (3, 5), "m1")
    m2 = _param(rng, (5, 2), "m2")
    v1 = _param(rng, (5,), "v1")
    v2 = _param(rng, (5,), "v2")
    add_case("matmul", [m1, m2], lambda m1=m1, m2=m2: _scalarize(T.matmul(m1, m2), np.random.default_rng(7)))
    add_case("matmul_vec_mat", [v1, m2], lambda v1=v1, m2=m2: _scalarize(T.matmul(v1, m2), np.random.default_rng(8)))
    add_case("matmul_mat_vec", [m1, v1], lambda m1=m1, v1=v1: _scalarize(T.matmul(m1, v1), np.random.default_rng(9)))
    add_case("matmul_dot", [v1, v2], lambda v1=v1, v2=v2: T.matmul(v1, v2))

    x = _param(rng, (2, 6), "x")
    add_case("exp", [x], lambda x=x: _scalarize(T.exp(x), np.random.default_rng(10)))
    add_case("sigmoid", [x], lambda x=x: _scalarize(T.sigmoid(x), np.random.default_rng(11)))
    add_case("tanh", [x], lambda x=x: _scalarize(T.tanh(x), np.random.default_rng(12)))
    add_case("softmax", [x], lambda x=x: _scalarize(T.softmax(x, axis=-1), np.random.default_rng(13)))

    # keep relu/abs inputs away from their kink at 0
    xk_data = rng.uniform(0.1, 1.0, (2, 6)) * rng.choice([-1.0, 1.0], (2, 6))
    xk = T.Parameter(xk_data.astype(np.float64), "xk")
    add_case("relu", [xk], lambda xk=xk: _scalarize(T.relu(xk), np.random.default_rng(14)))
    add_case("abs", [xk], lambda xk=xk: _scalarize(T.absval(xk), np.random.default_rng(15)))

    c1 = _param(rng, (3, 2), "c1")
    c2 = _param(rng, (3, 3), "c2")
    add_case(
        "concat",
        [c1, c2],
        lambda c1=c1, c2=c2: _scalarize(T.concat([c1, c2], axis=1), np.random.default_rng(16)),
    )
    add_case("reshape", [a], lambda a=a: _scalarize(T.reshape(a, (4, 3)), np.random.default_rng(17)))
    add_case("narrow", [a], lambda a=a: _scalarize(T.narrow(a, 1, 1, 2), np.random.default_rng(18)))
    add_case("sum", [a], lambda a=a: T.tsum(a))
    add_case("sum_axis", [a], lambda a=a: _scalarize(T.tsum(a, axis=0), np.random.default_rng(19)))
    add_case("mean", [a], lambda a=a: T.tmean(a))
    add_case("mean_axis", [a], lambda a=a: _scalarize(T.tmean(a, axis=1), np.random.default_rng(20)))

    plane = _param(rng, (5, 5, 3), "plane")
    # queries strictly inside cells so the interpolant is smooth at +-h
    cells = rng.integers(0, 4, (6, 2))
    uv = T.Parameter((cells + rng.uniform(0.1, 0.9, (6, 2))) / 4.0, "uv")
    add_case(
        "plane_sample",
        [plane, uv],
        lambda plane=plane, uv=uv: _scalarize(T.plane_sample(plane, uv), np.random.default_rng(21)),
    )
    line = _param(rng, (7, 3), "line")
    u = T.Parameter((rng.integers(0, 6, (6,)) + rng.uniform(0.1, 0.9, (6,))) / 6.0, "u")
    add_case(
        "line_sample",
        [line, u],
        lambda line=line, u=u: _scalarize(T.line_sample(line, u), np.random.default_rng(22)),
    )

    img = _param(rng, (4, 6, 3), "img")
    add_case("avgpool2", [img], lambda img=img: _scalarize(T.avgpool2(img), np.random.default_rng(23)))
    return cases


def check_primitives(seed=0, points=100, h=1e-6, tol=1e-5):
    """FD-check every primitive at ``points`` random coordinates total per case."""
    results = []
    for rep in range(max(1, points // 25)):
        for name, params, build in primitive_cases(seed + rep * 977):
            report = T.finite_difference_check(build, params, h=h, tol=tol)
            results.append((name, report))
    return results


# ---------------------------------------------------------------------------
# module scope


def module_cases(seed=0):
    """FD cases for each mid-level differentiable operation."""
    rng = np.random.default_rng(seed)
    cases = []

    quat = _param(rng, (4, 4), "quat", -1.0, 1.0)
    lscale = _param(rng, (4, 3), "log_scale", -1.5, 0.5)
    cases.append(
        (
            "covariance_from_rs",
            [quat, lscale],
            lambda quat=quat, lscale=lscale: _scalarize(
                covariance_op(quat, lscale), np.random.default_rng(31)
            ),
        )
    )

    sh = _param(rng, (4, 12), "sh", -0.8, 0.8)
    dirs = rng.normal(size=(4, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cases.append(
        (
            "sh_to_color_deg1",
            [sh],
            lambda sh=sh, dirs=dirs: _scalarize(
                sh_color_op(sh, dirs, 1), np.random.default_rng(32)
            ),
        )
    )

    track = AudioFrameTrack(rng.normal(size=(12, 6)).astype(np.float64), 25.0)
    filt = TemporalFilter.create(6, 4, seed=3, dtype=np.float64)
    fparams = [filt.logits, filt.projection]
    cases.append(
        (
            "smooth_audio",
            fparams,
            lambda track=track, filt=filt: _scalarize(
                smooth_audio(window_audio(track, 5), filt), np.random.default_rng(33)
            ),
        )
    )

    cfg = AudioPlaneConfig(base_res=6, channels=4, scales=(1, 2), fusion="concat")
    ap = AudioPlane.create(cfg, seed=4, dtype=np.float64)
    a_vec = _param(rng, (4,), "a_vec", -0.5, 0.5)
    cases.append(
        (
            "audio_attend",
            [a_vec, ap.protos[0]],
            lambda a_vec=a_vec, ap=ap: _scalarize(
                audio_attend(a_vec, ap.protos[0]), np.random.default_rng(34)
            ),
        )
    )

    pts = T.Parameter(rng.uniform(0.08, 0.92, (5, 3)), "points")
    ap_params = ap.parameters()
    cases.append(
        (
            "assemble_feature",
            [pts, a_vec] + ap_params,
            lambda pts=pts, a_vec=a_vec, ap=ap: _scalarize(
                assemble_feature(pts, a_vec, ap), np.random.default_rng(35)
            ),
        )
    )

    dec = DeformDecoder.create(ap.feature_width(), seed=5, dtype=np.float64, zero_init=False)
    feat = _param(rng, (5, ap.feature_width()), "feat", -0.5, 0.5)

    def build_decode(dec=dec, feat=feat):
        offsets, dyn = dec.decode(feat)
        stacked = T.concat(list(offsets) + [T.reshape(dyn, (5, 1))], axis=1)
        return _scalarize(stacked, np.random.default_rng(36))

    cases.append(("decode", dec.parameters() + [feat], build_decode))

    img_a = _param(rng, (8, 8, 3), "img_a", 0.05, 0.95)
    img_b = rng.uniform(0.0, 1.0, (8, 8, 3))
    cases.append(("l1_loss", [img_a], lambda img_a=img_a, img_b=img_b: l1_loss(img_a, T.Tensor(img_b))))
    cases.append(
        (
            "perceptual_proxy",
            [img_a],
            lambda img_a=img_a, img_b=img_b: perceptual_proxy(img_a, T.Tensor(img_b)),
        )
    )
    gmap = _param(rng, (8, 8), "gmap", 0.02, 0.98)
    mask = (rng.uniform(size=(8, 8)) > 0.5).astype(np.float64)
    cases.append(
        (
            "mask_margin_loss",
            [gmap],
            lambda gmap=gmap, mask=mask: mask_margin_loss(gmap, T.Tensor(mask), 0.2),
        )
    )

    cases.append(_render_case(seed))
    return cases


def _render_case(seed):
    rng = np.random.default_rng(seed + 100)
    cloud = init_cloud(5, seed=seed + 1, aabb=np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]))
    cloud = cloud.astype(np.float64)
    cloud.sh.data[:] = rng.uniform(-0.8, 0.8, cloud.sh.data.shape)
    cloud.alpha_logit.data[:] = rng.uniform(-0.5, 1.0, cloud.alpha_logit.data.shape)
    # strong anisotropy + fully random rotations keep quaternion grads healthy
    cloud.log_scale.data[:] = np.log(rng.uniform(0.1, 0.45, cloud.log_scale.data.shape))
    cloud.quat.data[:] = rng.normal(size=cloud.quat.data.shape)
    cam = look_at_camera(16, 16, azimuth_deg=10.0, distance=2.5, fov_scale=1.1)
    target = rng.uniform(0.0, 1.0, (16, 16, 3))
    params = [cloud.mu, cloud.quat, cloud.log_scale, cloud.sh, cloud.alpha_logit, cloud.d_logit]

    def build(cloud=cloud, cam=cam, target=target):
        out = rasterize_op(
            cloud.mu,
            cloud.quat,
            cloud.log_scale,
            cloud.sh,
            cloud.alpha_logit,
            T.sigmoid(cloud.d_logit),
            cam,
            background=np.array([0.0, 0.0, 0.0]),
            sh_degree=cloud.sh_degree,
        )
        img = T.narrow(out, 2, 0, 3)
        amap = T.reshape(T.narrow(out, 2, 3, 1), (16, 16))
        gmap = T.reshape(T.narrow(out, 2, 4, 1), (16, 16))
        w = np.random.default_rng(37)
        return T.add(
            T.add(l1_loss(img, T.Tensor(target)), T.mul(T.tmean(amap), 0.3)),
            T.mul(T.tmean(gmap), 0.5),
        )

    return ("render", params, build)


def check_modules(seed=0, h=1e-6, tol=1e-5):
    results = []
    for name, params, build in module_cases(seed):
        report = T.finite_difference_check(build, params, h=h, tol=tol)
        results.append((name, report))
    return results


# ---------------------------------------------------------------------------
# pipeline scope


def build_pipeline_case(seed=0, res=16, n_points=5, plane_res=8, channels=4, scales=(1, 2)):
    """A full fine-stage loss in float64: audio -> field -> deform -> render -> loss.

    Returns (params, build_loss). Decoder output layers get small random
    weights so every upstream parameter receives signal. The loss carries a
    sign-aligned linear probe per parameter: central differences at h=1e-6
    cannot resolve gradients below ~1e-9 (truncation), so the probe lifts
    every coordinate's gradient above that floor without adding curvature;
    a wrong analytic gradient still surfaces at most 3x attenuated.
    """
    rng = np.random.default_rng(seed)
    aabb = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    cloud = init_cloud(n_points, seed=seed + 1, aabb=aabb).astype(np.float64)
    # interior positions away from aabb clamp, moderate opacity, no 0.99 clip
    cloud.mu.data[:] = rng.uniform(-0.6, 0.6, (n_points, 3))
    cloud.quat.data[:] = rng.normal(size=(n_points, 4))
    cloud.log_scale.data[:] = np.log(rng.uniform(0.15, 0.4, (n_points, 3)))
    cloud.sh.data[:] = rng.uniform(-0.8, 0.8, cloud.sh.data.shape)
    cloud.alpha_logit.data[:] = rng.uniform(-0.5, 0.5, n_points)

    track = AudioFrameTrack(rng.normal(size=(9, 29)).astype(np.float64) * 0.5, 25.0)
    filt = TemporalFilter.create(29, channels, seed=seed + 2, dtype=np.float64)
    cfg = AudioPlaneConfig(base_res=plane_res, channels=channels, scales=tuple(scales), fusion="concat")
    ap = AudioPlane.create(cfg, seed=seed + 3, dtype=np.float64)
    # healthy grid magnitudes keep every feature column (and therefore every
    # first-layer weight gradient) well above the finite-difference floor
    grid_rng = np.random.default_rng(seed + 5)
    for p in ap.parameters():
        p.data[:] = grid_rng.uniform(-0.6, 0.6, p.data.shape)
    dec = DeformDecoder.create(ap.feature_width(), seed=seed + 4, dtype=np.float64, zero_init=False)

    cam = look_at_camera(res, res, azimuth_deg=-8.0, distance=2.5, fov_scale=1.1)
    target = rng.uniform(0.0, 1.0, (res, res, 3))
    mask = (rng.uniform(size=(res, res)) > 0.6).astype(np.float64)
    frame = 4

    params = (
        [cloud.mu, cloud.quat, cloud.log_scale, cloud.sh, cloud.alpha_logit]
        + ap.parameters()
        + dec.parameters()
        + [filt.logits, filt.projection]
    )

    def base_loss():
        a = smooth_audio(window_audio(track, frame), filt)
        span = aabb[1] - aabb[0]
        p_norm = T.mul(T.sub(cloud.mu, aabb[0]), 1.0 / span)
        feat = assemble_feature(p_norm, a, ap)
        delta, dyn = dec.decode(feat)
        deformed = apply_deformation(cloud, delta, dyn)
        out = rasterize_op(
            deformed.mu,
            deformed.quat,
            deformed.log_scale,
            deformed.sh,
            deformed.alpha_logit,
            dyn,
            cam,
            background=np.array([0.0, 0.0, 0.0]),
            sh_degree=cloud.sh_degree,
        )
        img = T.narrow(out, 2, 0, 3)
        gmap = T.reshape(T.narrow(out, 2, 4, 1), (res, res))
        loss = T.add(
            T.add(
                l1_loss(img, T.Tensor(target)),
                T.mul(perceptual_proxy(img, T.Tensor(target)), 0.05),
            ),
            T.mul(mask_margin_loss(gmap, T.Tensor(mask), 0.2), 0.1),
        )
        return loss

    probes = _linear_probes(base_loss, params, floor=1e-4)

    def build_loss():
        loss = base_loss()
        for p in params:
            loss = T.add(loss, T.tsum(T.mul(p, probes[p.name])))
        return loss

    return params, build_loss


def _linear_probes(base_loss, params, floor):
    """Per-parameter linear probe weights aligned with the base gradients."""
    for p in params:
        p.zero_grad()
    loss = base_loss()
    loss.backward()
    probes = {}
    for p in params:
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        sign = np.where(g >= 0.0, 1.0, -1.0)
        probes[p.name] = T.Tensor(sign * np.maximum(np.abs(g), floor))
        p.zero_grad()
    return probes


def check_pipeline(seed=0, h=1e-6, tol=1e-5):
    params, build_loss = build_pipeline_case(seed)
    return T.finite_difference_check(build_loss, params, h=h, tol=tol)
