import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiosplat import tensor as T
from audiosplat.gaussians import (
    GaussianCloud,
    SH_C1,
    covariance_from_rs,
    init_cloud,
    inverse_sigmoid,
    sh_to_color,
)

AABB = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])


def quat_to_matrix_oracle(q):
    """Independent rotation construction via scipy (x, y, z, w) order."""
    from scipy.spatial.transform import Rotation

    q = q / np.linalg.norm(q)
    return Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()


def test_covariance_identity_cases():
    quat = np.array([[1.0, 0.0, 0.0, 0.0]])
    Sigma, _ = covariance_from_rs(quat, np.log(np.array([[1.0, 1.0, 1.0]])))
    assert np.allclose(Sigma[0], np.eye(3), atol=1e-12)
    Sigma2, _ = covariance_from_rs(quat, np.log(np.array([[2.0, 1.0, 1.0]])))
    assert np.allclose(Sigma2[0], np.diag([4.0, 1.0, 1.0]), atol=1e-12)


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_covariance_matches_rotation_oracle(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0.2, -0.1, 0.3])
    s = rng.uniform(0.2, 2.0, 3)
    Sigma, _ = covariance_from_rs(q[None], np.log(s)[None])
    R = quat_to_matrix_oracle(q)
    expected = R @ np.diag(s**2) @ R.T
    assert np.allclose(Sigma[0], expected, atol=1e-10)


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_covariance_symmetric_and_choleskyable(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(3, 4))
    q[np.linalg.norm(q, axis=1) < 1e-3] = [1, 0, 0, 0]
    s = np.log(rng.uniform(0.05, 2.0, (3, 3)))
    Sigma, _ = covariance_from_rs(q, s)
    assert np.max(np.abs(Sigma - np.transpose(Sigma, (0, 2, 1)))) < 1e-7
    for m in Sigma:
        np.linalg.cholesky(m + 1e-9 * np.eye(3))


def test_zero_quaternion_rejected():
    with pytest.raises(ValueError):
        covariance_from_rs(np.zeros((1, 4)), np.zeros((1, 3)))


def test_sh_color_zero_coefficients_gray():
    colors, _ = sh_to_color(np.zeros((2, 3)), np.tile([0.0, 0.0, 1.0], (2, 1)), 0)
    assert np.allclose(colors, 0.5)


def test_sh_color_degree0_direction_independent():
    sh = np.array([[0.3, -0.2, 0.1]])
    c1, _ = sh_to_color(sh, np.array([[0.0, 0.0, 1.0]]), 0)
    c2, _ = sh_to_color(sh, np.array([[1.0, 0.0, 0.0]]), 0)
    assert np.array_equal(c1, c2)


def test_sh_color_degree1_z_aligned():
    # coefficients on the z basis only: colors at +-z differ by 2*k1*coef
    sh = np.zeros((2, 12))
    coef = np.array([0.2, 0.1, 0.05])
    sh[:, 6:9] = coef
    dirs = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    colors, _ = sh_to_color(sh, dirs, 1)
    assert np.allclose(colors[0] - colors[1], 2.0 * SH_C1 * coef, atol=1e-12)


def test_init_cloud_defaults_and_determinism():
    cloud = init_cloud(1000, seed=3, aabb=AABB)
    assert cloud.n == 1000
    assert np.all(cloud.mu.data >= AABB[0]) and np.all(cloud.mu.data <= AABB[1])
    assert np.allclose(cloud.quat.data[:, 0], 1.0) and np.allclose(cloud.quat.data[:, 1:], 0.0)
    opacity = 1.0 / (1.0 + np.exp(-cloud.alpha_logit.data))
    assert np.allclose(opacity, 0.1, atol=1e-6)
    assert np.allclose(cloud.sh.data, 0.0)
    assert np.allclose(1.0 / (1.0 + np.exp(-cloud.d_logit.data)), 0.5)
    diag = np.linalg.norm(AABB[1] - AABB[0])
    assert np.allclose(np.exp(cloud.log_scale.data), diag / 1000 ** (1 / 3), rtol=1e-6)

    again = init_cloud(1000, seed=3, aabb=AABB)
    for a, b in zip(cloud.parameters(), again.parameters()):
        assert np.array_equal(a.data, b.data)


def test_init_cloud_single_point():
    cloud = init_cloud(1, seed=0, aabb=AABB)
    assert cloud.n == 1
    assert np.all(cloud.mu.data >= AABB[0]) and np.all(cloud.mu.data <= AABB[1])
    with pytest.raises(ValueError):
        init_cloud(0, seed=0, aabb=AABB)


def test_agc1_roundtrip_bitwise():
    cloud = init_cloud(17, seed=5, aabb=AABB)
    cloud.sh.data[:] = np.random.default_rng(1).normal(size=cloud.sh.data.shape).astype(np.float32)
    blob = cloud.to_bytes()
    again = GaussianCloud.from_bytes(blob)
    assert blob == again.to_bytes()
    assert again.sh_degree == 0
    assert np.array_equal(cloud.mu.data, again.mu.data)


def test_agc1_roundtrip_degree1():
    cloud = init_cloud(5, seed=2, aabb=AABB, sh_degree=1)
    assert cloud.sh.data.shape == (5, 12)
    blob = cloud.to_bytes()
    again = GaussianCloud.from_bytes(blob)
    assert again.sh.data.shape == (5, 12)
    assert blob == again.to_bytes()


def test_inverse_sigmoid():
    assert abs(1.0 / (1.0 + np.exp(-inverse_sigmoid(0.1))) - 0.1) < 1e-12


def test_normalized_positions_in_unit_cube():
    cloud = init_cloud(50, seed=9, aabb=AABB)
    p = cloud.normalized_positions().data
    assert np.all(p >= 0.0) and np.all(p <= 1.0)
