import numpy as np
import pytest

from audiosplat import tensor as T
from audiosplat.deform import DeformDecoder, apply_deformation
from audiosplat.gaussians import init_cloud
from audiosplat.rasterizer import rasterize_arrays
from audiosplat.scenes import look_at_camera

AABB = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])


def test_zero_init_gives_identity_offsets():
    dec = DeformDecoder.create(24, seed=0, dtype=np.float64)
    feat = T.Tensor(np.random.default_rng(1).normal(size=(7, 24)))
    offsets, dyn = dec.decode(feat)
    assert np.allclose(offsets.dmu.data, 0.0)
    assert np.allclose(offsets.dquat.data, 0.0)
    assert np.allclose(offsets.dlog_scale.data, 0.0)
    assert np.allclose(dyn.data, 0.5)


def test_position_offset_bounded_by_tanh():
    dec = DeformDecoder.create(8, seed=1, dtype=np.float64, zero_init=False, position_bound=2.0)
    dec.layers1[-1].weight.data[:] *= 100.0  # saturate tanh
    feat = T.Tensor(np.random.default_rng(2).normal(size=(20, 8)) * 10)
    offsets, _ = dec.decode(feat)
    bound = 0.1 * 2.0
    assert np.all(np.abs(offsets.dmu.data) <= bound + 1e-12)


def test_decode_width_mismatch():
    dec = DeformDecoder.create(8, seed=0)
    with pytest.raises(T.ShapeError):
        dec.decode(T.Tensor(np.zeros((3, 9), dtype=np.float32)))


def test_apply_gate_closed_is_exact_identity():
    cloud = init_cloud(5, seed=1, aabb=AABB)
    dec = DeformDecoder.create(6, seed=2, zero_init=False)
    feat = T.Tensor(np.random.default_rng(3).normal(size=(5, 6)).astype(np.float32))
    offsets, _ = dec.decode(feat)
    zero_gate = T.Tensor(np.zeros(5, dtype=np.float32))
    deformed = apply_deformation(cloud, offsets, zero_gate)
    assert np.array_equal(deformed.mu.data, cloud.mu.data)
    assert np.array_equal(deformed.quat.data, cloud.quat.data)
    assert np.array_equal(deformed.log_scale.data, cloud.log_scale.data)


def test_apply_zero_offsets_is_exact_identity():
    cloud = init_cloud(5, seed=1, aabb=AABB)
    dec = DeformDecoder.create(6, seed=3)  # zero-init outputs
    feat = T.Tensor(np.random.default_rng(4).normal(size=(5, 6)).astype(np.float32))
    offsets, dyn = dec.decode(feat)
    deformed = apply_deformation(cloud, offsets, dyn)
    assert np.array_equal(deformed.mu.data, cloud.mu.data)
    assert np.array_equal(deformed.quat.data, cloud.quat.data)
    assert np.array_equal(deformed.log_scale.data, cloud.log_scale.data)


def test_apply_matches_field_by_field_formula():
    rng = np.random.default_rng(5)
    cloud = init_cloud(4, seed=6, aabb=AABB).astype(np.float64)
    dec = DeformDecoder.create(6, seed=7, dtype=np.float64, zero_init=False)
    feat = T.Tensor(rng.normal(size=(4, 6)))
    offsets, dyn = dec.decode(feat)
    deformed = apply_deformation(cloud, offsets, dyn)
    d = dyn.data[:, None]
    assert np.allclose(deformed.mu.data, cloud.mu.data + d * offsets.dmu.data, atol=1e-12)
    assert np.allclose(deformed.quat.data, cloud.quat.data + d * offsets.dquat.data, atol=1e-12)
    assert np.allclose(
        deformed.log_scale.data, cloud.log_scale.data + d * offsets.dlog_scale.data, atol=1e-12
    )


def test_apply_misaligned_counts_rejected():
    cloud = init_cloud(4, seed=6, aabb=AABB)
    dec = DeformDecoder.create(6, seed=7)
    feat = T.Tensor(np.zeros((3, 6), dtype=np.float32))
    offsets, dyn = dec.decode(feat)
    with pytest.raises(ValueError):
        apply_deformation(cloud, offsets, dyn)


def test_color_opacity_deformation_behind_flag():
    cloud = init_cloud(3, seed=8, aabb=AABB).astype(np.float64)
    dec = DeformDecoder.create(6, seed=9, dtype=np.float64, deform_color=True, zero_init=False)
    feat = T.Tensor(np.random.default_rng(10).normal(size=(3, 6)))
    offsets, dyn = dec.decode(feat)
    assert offsets.dsh is not None and offsets.dalpha_logit is not None
    deformed = apply_deformation(cloud, offsets, dyn)
    assert not np.array_equal(deformed.sh.data, cloud.sh.data)
    assert not np.array_equal(deformed.alpha_logit.data, cloud.alpha_logit.data)


def test_dynamism_gradient_wrt_feature_matches_fd():
    dec = DeformDecoder.create(6, seed=11, dtype=np.float64, zero_init=False)
    feat = T.Parameter(np.random.default_rng(12).normal(size=(4, 6)) * 0.5, "feat")
    w = np.random.default_rng(13).uniform(-0.8, 0.8, 4)

    def build():
        _, dyn = dec.decode(feat)
        return T.tsum(T.mul(dyn, T.Tensor(w)))

    report = T.finite_difference_check(build, [feat])
    assert report.passed, report


def test_identity_at_init_renders_bitwise_equal():
    cloud = init_cloud(6, seed=14, aabb=AABB)
    cloud.sh.data[:] = np.random.default_rng(15).normal(size=cloud.sh.data.shape).astype(np.float32) * 0.4
    cam = look_at_camera(16, 16, distance=2.5, fov_scale=1.0)
    dec = DeformDecoder.create(6, seed=16)  # zero-init
    feat = T.Tensor(np.random.default_rng(17).normal(size=(6, 6)).astype(np.float32))
    offsets, dyn = dec.decode(feat)
    deformed = apply_deformation(cloud, offsets, dyn)

    args = dict(cam=cam, background=np.zeros(3, dtype=np.float32), sh_degree=0)
    before, _ = rasterize_arrays(
        cloud.mu.data, cloud.quat.data, cloud.log_scale.data, cloud.sh.data,
        cloud.alpha_logit.data, None, **args,
    )
    after, _ = rasterize_arrays(
        deformed.mu.data, deformed.quat.data, deformed.log_scale.data, deformed.sh.data,
        deformed.alpha_logit.data, None, **args,
    )
    assert np.array_equal(before, after)
