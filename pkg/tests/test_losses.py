import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiosplat import tensor as T
from oracles import ssim_oracle
from audiosplat.losses import (
    l1_loss,
    mask_margin_loss,
    pearson,
    perceptual_proxy,
    psnr,
    roi_intensity,
    ssim,
    sync_correlation,
)


def rand_img(seed, shape=(8, 8, 3)):
    return np.random.default_rng(seed).uniform(0, 1, shape)


def test_l1_identical_zero_and_offset():
    a = rand_img(0)
    assert l1_loss(a, a).item() == 0.0
    assert abs(l1_loss(a + 0.25, a).item() - 0.25) < 1e-7


def test_l1_matches_direct_mean():
    a, b = rand_img(1), rand_img(2)
    assert abs(l1_loss(a, b).item() - np.abs(a - b).mean()) < 1e-12


def test_perceptual_identical_and_constant_offset():
    a = rand_img(3)
    assert perceptual_proxy(a, a).item() == 0.0
    assert abs(perceptual_proxy(np.clip(a, 0, 0.7) + 0.25, np.clip(a, 0, 0.7)).item() - 0.25) < 1e-6


def test_perceptual_matches_pyramid_oracle():
    a, b = rand_img(4), rand_img(5)

    def down(x):
        h, w, c = x.shape
        return x.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))

    expected = (
        np.abs(a - b).mean()
        + np.abs(down(a) - down(b)).mean()
        + np.abs(down(down(a)) - down(down(b))).mean()
    ) / 3.0
    assert abs(perceptual_proxy(a, b).item() - expected) < 1e-12


def test_perceptual_requires_divisible_size():
    a = np.zeros((6, 6, 3))
    with pytest.raises(T.ShapeError):
        perceptual_proxy(a, a)


def test_mask_margin_dead_zone_and_value():
    m = (rand_img(6, (8, 8)) > 0.5).astype(np.float64)
    assert mask_margin_loss(m, m, 0.2).item() == 0.0
    g = np.clip(m - 0.5, 0.0, 1.0) + 0.5 * (m == 0)  # |m-g| = 0.5 everywhere
    assert abs(mask_margin_loss(g, m, 0.2).item() - 0.3) < 1e-7
    g_close = np.clip(m + 0.19 * (1 - 2 * m), 0, 1)  # inside the margin
    assert mask_margin_loss(g_close, m, 0.2).item() == 0.0


def test_mask_margin_gradient_dead_zone_and_slope():
    m = np.zeros((4, 4))
    g = T.Parameter(np.full((4, 4), 0.5), "g")  # |m-g|=0.5 > margin
    loss = mask_margin_loss(g, m, 0.2)
    loss.backward()
    assert np.allclose(g.grad, 1.0 / 16.0)  # +1/(H*W) outside the margin
    g2 = T.Parameter(np.full((4, 4), 0.1), "g2")  # inside margin
    loss2 = mask_margin_loss(g2, m, 0.2)
    loss2.backward()
    assert g2.grad is None or np.allclose(g2.grad, 0.0)


def test_mask_margin_fd():
    rng = np.random.default_rng(7)
    m = (rng.uniform(size=(6, 6)) > 0.5).astype(np.float64)
    g = T.Parameter(rng.uniform(0.0, 1.0, (6, 6)), "g")

    def build():
        return mask_margin_loss(g, T.Tensor(m), 0.2)

    report = T.finite_difference_check(build, [g])
    assert report.passed, report


def test_psnr_reference_values():
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.1)  # MSE = 0.01
    assert abs(psnr(a, b) - 20.0) < 1e-9
    assert psnr(a, a) == float("inf")


def test_psnr_matches_direct_formula():
    a, b = rand_img(8), rand_img(9)
    expected = 10 * np.log10(1.0 / np.mean((a - b) ** 2))
    assert abs(psnr(a, b) - expected) < 1e-12


def test_ssim_identical_is_one():
    a = rand_img(10, (16, 16))
    assert abs(ssim(a, a) - 1.0) < 1e-12


def test_ssim_negative_for_inverted_image():
    rng = np.random.default_rng(11)
    a = 0.5 + 0.4 * np.sin(np.outer(np.arange(16), np.arange(16)) / 5.0) + 0.05 * rng.uniform(size=(16, 16))
    a = np.clip(a, 0, 1)
    assert ssim(a, 1.0 - a) < 0.0


def test_ssim_constant_images_luminance_closed_form():
    a = np.full((16, 16), 0.3)
    b = np.full((16, 16), 0.6)
    c1, c2 = 0.01**2, 0.03**2
    expected = ((2 * 0.3 * 0.6 + c1) * c2) / ((0.09 + 0.36 + c1) * c2)
    assert abs(ssim(a, b) - expected) < 1e-9


def test_ssim_matches_window_oracle():
    for seed in range(10):
        a = rand_img(100 + seed, (14, 14))
        b = rand_img(200 + seed, (14, 14))
        assert abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6


def test_sync_correlation_affine_invariance():
    rng = np.random.default_rng(12)
    driving = rng.uniform(0, 1, 20)
    frames = [np.full((6, 6), 2.0 * d + 0.3) for d in driving]
    roi = (1, 5, 1, 5)
    assert abs(sync_correlation(frames, roi, driving) - 1.0) < 1e-9
    assert abs(sync_correlation(frames, roi, -driving) + 1.0) < 1e-9


def test_sync_correlation_zero_variance_rejected():
    frames = [np.full((4, 4), 0.5)] * 5
    with pytest.raises(ValueError):
        sync_correlation(frames, (0, 4, 0, 4), np.ones(5))


def test_roi_intensity_rectangle():
    frame = np.zeros((6, 6))
    frame[2:4, 3:5] = 1.0
    assert roi_intensity([frame], (2, 4, 3, 5))[0] == 1.0


def test_pearson_short_series_rejected():
    with pytest.raises(ValueError):
        pearson(np.array([1.0, 2.0]), np.array([1.0, 2.0]))


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_losses_nonnegative_and_zero_at_equality(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (8, 8, 3))
    b = rng.uniform(0, 1, (8, 8, 3))
    assert l1_loss(a, b).item() >= 0.0
    assert perceptual_proxy(a, b).item() >= 0.0
    m = (rng.uniform(size=(8, 8)) > 0.5).astype(np.float64)
    g = rng.uniform(0, 1, (8, 8))
    assert mask_margin_loss(g, m, 0.2).item() >= 0.0
    assert l1_loss(a, a).item() == 0.0
    assert mask_margin_loss(m, m, 0.2).item() == 0.0
