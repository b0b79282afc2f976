"""Training losses (on the tape) and evaluation metrics (plain numpy).

The perceptual term is a multi-scale L1 pyramid standing in for a learned
perceptual network behind the same interface; the mask term is a per-pixel
hinge with a dead-zone of +-margin around the reference mask.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_tensor(x):
    return x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x))


def l1_loss(rendered, target):
    """Mean absolute difference over all pixels and channels."""
    rendered = _as_tensor(rendered)
    target = _as_tensor(target)
    if rendered.data.shape != target.data.shape:
        raise T.ShapeError("l1_loss shapes differ")
    return T.tmean(T.absval(T.sub(rendered, target)))


def perceptual_proxy(rendered, target):
    """Mean of L1 at full, 1/2 and 1/4 box-downsampled resolution."""
    rendered = _as_tensor(rendered)
    target = _as_tensor(target)
    if rendered.data.shape != target.data.shape:
        raise T.ShapeError("perceptual_proxy shapes differ")
    h, w = rendered.data.shape[:2]
    if h % 4 or w % 4:
        raise T.ShapeError("perceptual_proxy needs sizes divisible by 4")
    total = l1_loss(rendered, target)
    r2, t2 = T.avgpool2(rendered), T.avgpool2(target)
    total = T.add(total, l1_loss(r2, t2))
    total = T.add(total, l1_loss(T.avgpool2(r2), T.avgpool2(t2)))
    return T.mul(total, 1.0 / 3.0)


def mask_margin_loss(g, mask, margin):
    """Per-pixel hinge mean(max(0, |m - g| - margin)); zero inside the margin."""
    g = _as_tensor(g)
    mask = _as_tensor(mask)
    if g.data.shape != mask.data.shape:
        raise T.ShapeError("mask_margin_loss shapes differ")
    return T.tmean(T.relu(T.sub(T.absval(T.sub(mask, g)), margin)))


# ---------------------------------------------------------------------------
# metrics (numpy; not differentiated)


def psnr(rendered, target):
    """10*log10(1/MSE) for [0,1] images; +inf for identical inputs."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError("psnr shapes differ")
    mse = np.mean((rendered - target) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_kernel(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter2d_valid(img, k):
    """Separable 'valid' correlation with a 1-D kernel along both axes."""
    size = k.size
    h, w = img.shape
    tmp = np.zeros((h, w - size + 1))
    for i in range(size):
        tmp += k[i] * img[:, i : w - size + 1 + i]
    out = np.zeros((h - size + 1, w - size + 1))
    for i in range(size):
        out += k[i] * tmp[i : h - size + 1 + i, :]
    return out


def _ssim_single(a, b):
    k = _gaussian_kernel()
    mu_a = _filter2d_valid(a, k)
    mu_b = _filter2d_valid(b, k)
    var_a = _filter2d_valid(a * a, k) - mu_a**2
    var_b = _filter2d_valid(b * b, k) - mu_b**2
    cov = _filter2d_valid(a * b, k) - mu_a * mu_b
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(rendered, target):
    """Single-scale SSIM, 11x11 Gaussian window sigma=1.5, dynamic range 1.

    Color images are averaged over channels.
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError("ssim shapes differ")
    if rendered.ndim == 2:
        return _ssim_single(rendered, target)
    return float(np.mean([_ssim_single(rendered[:, :, c], target[:, :, c])
                          for c in range(rendered.shape[2])]))


def roi_intensity(frames, roi):
    """Per-frame mean intensity inside the (y0, y1, x0, x1) pixel rectangle."""
    y0, y1, x0, x1 = roi
    vals = []
    for frame in frames:
        patch = np.asarray(frame)[y0:y1, x0:x1]
        vals.append(float(patch.mean()))
    return np.asarray(vals)


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 3:
        raise ValueError("need equal-length series of at least 3 samples")
    xd = x - x.mean()
    yd = y - y.mean()
    den = np.sqrt((xd * xd).sum() * (yd * yd).sum())
    if den == 0.0:
        raise ValueError("zero-variance input")
    return float((xd * yd).sum() / den)


def sync_correlation(frames, roi, driving):
    """Pearson r between mean ROI intensity per frame and the driving signal."""
    series = roi_intensity(frames, roi)
    return pearson(series, driving)
