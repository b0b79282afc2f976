"""Independent brute-force oracles shared by unit and acceptance tests.

Everything here re-derives results from the documented math directly (per
pixel, per window, per sample) and shares no code with the implementation.
"""

import numpy as np

from audiosplat.plane import TRIPLES
from audiosplat.rasterizer import ALPHA_CLIP, COV_DILATION, T_EARLY_EXIT


def render_oracle(cloud, cam, background):
    """Per-pixel front-to-back compositing evaluated directly."""
    import scipy.spatial.transform as sst

    n = cloud.n
    W = cam.world_to_camera[:3, :3]
    trans = cam.world_to_camera[:3, 3]
    mu = cloud.mu.data.astype(np.float64)
    opac = 1.0 / (1.0 + np.exp(-cloud.alpha_logit.data.astype(np.float64)))
    colors = np.clip(0.5 + 0.28209479177387814 * cloud.sh.data[:, 0:3].astype(np.float64), 0, 1)
    d = 1.0 / (1.0 + np.exp(-cloud.d_logit.data.astype(np.float64)))

    splats = []
    for i in range(n):
        q = cloud.quat.data[i].astype(np.float64)
        q = q / np.linalg.norm(q)
        R = sst.Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        S = np.diag(np.exp(cloud.log_scale.data[i].astype(np.float64)))
        Sigma = R @ S @ S @ R.T
        t = W @ mu[i] + trans
        if t[2] <= 0.01:
            continue
        J = np.array(
            [
                [cam.fx / t[2], 0.0, -cam.fx * t[0] / t[2] ** 2],
                [0.0, cam.fy / t[2], -cam.fy * t[1] / t[2] ** 2],
            ]
        )
        M = J @ W
        cov2d = M @ Sigma @ M.T + COV_DILATION * np.eye(2)
        mean2d = np.array([cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy])
        lam = np.linalg.eigvalsh(cov2d)
        radius = 3.0 * np.sqrt(lam.max())
        splats.append((t[2], i, mean2d, np.linalg.inv(cov2d), radius, colors[i], opac[i], d[i]))
    splats.sort(key=lambda s: (s[0], s[1]))

    H, Wd = cam.height, cam.width
    img = np.zeros((H, Wd, 3))
    amap = np.zeros((H, Wd))
    gmap = np.zeros((H, Wd))
    for y in range(H):
        for x in range(Wd):
            Tcur = 1.0
            for depth, i, mean2d, conic, radius, c, o, dd in splats:
                if abs(x - mean2d[0]) > radius or abs(y - mean2d[1]) > radius:
                    continue
                if Tcur < T_EARLY_EXIT:
                    break
                delta = np.array([x, y]) - mean2d
                alpha = min(o * np.exp(-0.5 * delta @ conic @ delta), ALPHA_CLIP)
                img[y, x] += c * alpha * Tcur
                gmap[y, x] += dd * alpha * Tcur
                Tcur *= 1.0 - alpha
            img[y, x] += background * Tcur
            amap[y, x] = 1.0 - Tcur
    return img, amap, gmap


def bilinear_oracle(grid, u, v):
    res_u, res_v = grid.shape[0], grid.shape[1]
    x, y = u * (res_u - 1), v * (res_v - 1)
    i0, j0 = min(int(x), res_u - 2), min(int(y), res_v - 2)
    fx, fy = x - i0, y - j0
    return (
        grid[i0, j0] * (1 - fx) * (1 - fy)
        + grid[i0, j0 + 1] * (1 - fx) * fy
        + grid[i0 + 1, j0] * fx * (1 - fy)
        + grid[i0 + 1, j0 + 1] * fx * fy
    )


def linear_oracle(grid, u):
    res = grid.shape[0]
    x = u * (res - 1)
    i0 = min(int(x), res - 2)
    f = x - i0
    return grid[i0] * (1 - f) + grid[i0 + 1] * f


def attend_oracle(a, proto):
    scores = proto @ a / np.sqrt(proto.shape[1])
    w = np.exp(scores - scores.max())
    w /= w.sum()
    return w @ proto


def assemble_oracle(pts, a, ap):
    """Straight-line point-feature evaluation: sample, attend, fuse, concat."""
    out_rows = []
    for p in pts:
        row = []
        for planes_s, lines_s, proto_s in zip(ap.planes, ap.lines, ap.protos):
            f_a = attend_oracle(a, proto_s.data)
            for (i, j, k), plane in zip(TRIPLES, planes_s):
                spatial = bilinear_oracle(plane.data, p[i], p[j])
                t_audio = linear_oracle(lines_s[k].data, p[k]) * f_a
                if ap.config.fusion == "multiply":
                    row.append(spatial * t_audio)
                elif ap.config.fusion == "add":
                    row.append(spatial + t_audio)
                else:
                    row.append(np.concatenate([spatial, t_audio]))
        out_rows.append(np.concatenate(row))
    return np.stack(out_rows)


def ssim_oracle(a, b):
    """Window-by-window direct SSIM evaluation (11x11 Gaussian, sigma 1.5)."""
    k1d = np.exp(-0.5 * ((np.arange(11) - 5) / 1.5) ** 2)
    k1d /= k1d.sum()
    k2d = np.outer(k1d, k1d)
    h, w = a.shape
    vals = []
    for y in range(h - 10):
        for x in range(w - 10):
            wa = a[y : y + 11, x : x + 11]
            wb = b[y : y + 11, x : x + 11]
            mu_a = (wa * k2d).sum()
            mu_b = (wb * k2d).sum()
            va = (wa * wa * k2d).sum() - mu_a**2
            vb = (wb * wb * k2d).sum() - mu_b**2
            cov = (wa * wb * k2d).sum() - mu_a * mu_b
            c1, c2 = 0.01**2, 0.03**2
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
            )
    return float(np.mean(vals))


def mask_margin_oracle(g, m, margin):
    return float(np.mean(np.maximum(np.abs(m - g) - margin, 0.0)))


def psnr_oracle(a, b):
    mse = np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2)
    return float("inf") if mse == 0 else float(10.0 * np.log10(1.0 / mse))
