"""Representation benchmark: element counts, bytes and lookup throughput.

Compares three layouts of a 4D (space x time/audio) feature volume: the
dense grid, the six-plane factorization (tri-plane plus three
time-conditioned planes) and the audio-plane factorization used here. The
six-plane and dense variants exist only far enough to count elements and
answer point queries; they have no training path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .plane import AudioPlane, AudioPlaneConfig, assemble_feature, param_count

BYTES_PER_ELEMENT = 4  # float32


@dataclass
class VariantResult:
    variant: str
    elements: int
    bytes: int
    qps: float
    ratio_vs_dense: float


@dataclass
class BenchReport:
    results: list

    def to_csv(self):
        lines = ["variant,elements,bytes,qps,ratio_vs_dense"]
        for r in self.results:
            lines.append(
                f"{r.variant},{r.elements},{r.bytes},{r.qps:.1f},{r.ratio_vs_dense:.6f}"
            )
        return "\n".join(lines) + "\n"

    def to_table(self):
        header = f"{'variant':<12}{'elements':>14}{'bytes':>14}{'qps':>14}{'ratio':>10}"
        rows = [header, "-" * len(header)]
        for r in self.results:
            rows.append(
                f"{r.variant:<12}{r.elements:>14}{r.bytes:>14}{r.qps:>14.1f}{r.ratio_vs_dense:>10.4f}"
            )
        return "\n".join(rows)


def _dense4d_lookup(grid, pts, tq):
    """Quadrilinear interpolation in an (H,H,H,T,D) grid; pts in [0,1]^3."""
    h = grid.shape[0]
    t_res = grid.shape[3]
    out = 0.0
    coords = [pts[:, 0] * (h - 1), pts[:, 1] * (h - 1), pts[:, 2] * (h - 1), tq * (t_res - 1)]
    i0s, fs = [], []
    for c, res in zip(coords, (h, h, h, t_res)):
        i0 = np.clip(c.astype(np.int64), 0, res - 2)
        i0s.append(i0)
        fs.append(c - i0)
    for corner in range(16):
        bits = [(corner >> k) & 1 for k in range(4)]
        w = np.ones(pts.shape[0])
        idx = []
        for b, i0, f in zip(bits, i0s, fs):
            idx.append(i0 + b)
            w = w * (f if b else 1.0 - f)
        out = out + grid[idx[0], idx[1], idx[2], idx[3]] * w[:, None]
    return out


def _bilinear(grid2d, u, v):
    ru, rv = grid2d.shape[0], grid2d.shape[1]
    x = u * (ru - 1)
    y = v * (rv - 1)
    i0 = np.clip(x.astype(np.int64), 0, ru - 2)
    j0 = np.clip(y.astype(np.int64), 0, rv - 2)
    fx = (x - i0)[:, None]
    fy = (y - j0)[:, None]
    return (
        grid2d[i0, j0] * (1 - fx) * (1 - fy)
        + grid2d[i0, j0 + 1] * (1 - fx) * fy
        + grid2d[i0 + 1, j0] * fx * (1 - fy)
        + grid2d[i0 + 1, j0 + 1] * fx * fy
    )


def _time_bench(fn, n_queries, batch=4096):
    start = time.perf_counter()
    done = 0
    while done < n_queries:
        take = min(batch, n_queries - done)
        fn(done, take)
        done += take
    elapsed = time.perf_counter() - start
    return n_queries / max(elapsed, 1e-9)


def run_bench(base_res=64, channels=16, t_res=64, scales=(1, 2, 3, 4), n_queries=100_000, seed=0):
    """Analytic counts plus measured lookup throughput per variant."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, (n_queries, 3))
    tq = rng.uniform(0.0, 1.0, n_queries)

    dense_elems = param_count(base_res, channels, scales, "dense4d", t_res)
    six_elems = param_count(base_res, channels, scales, "sixplane", t_res)
    ap_elems = param_count(base_res, channels, scales, "audioplane")

    results = []

    if channels > 0:
        dense = np.zeros((base_res, base_res, base_res, t_res, channels), dtype=np.float32)
        qps = _time_bench(lambda o, n: _dense4d_lookup(dense, pts[o : o + n], tq[o : o + n]), n_queries)
        del dense
    else:
        qps = 0.0
    results.append(VariantResult("dense4d", dense_elems, dense_elems * BYTES_PER_ELEMENT, qps, 1.0))

    if channels > 0:
        planes = []
        for s in scales:
            res = s * base_res
            spatial = [rng.normal(size=(res, res, channels)).astype(np.float32) for _ in range(3)]
            temporal = [rng.normal(size=(res, t_res, channels)).astype(np.float32) for _ in range(3)]
            planes.append((spatial, temporal))

        def six_lookup(o, n):
            p = pts[o : o + n]
            tt = tq[o : o + n]
            acc = 0.0
            for spatial, temporal in planes:
                for (i, j), grid in zip(((0, 1), (0, 2), (1, 2)), spatial):
                    acc = acc + _bilinear(grid, p[:, i], p[:, j])
                for k, grid in zip((2, 1, 0), temporal):
                    acc = acc + _bilinear(grid, p[:, k], tt)
            return acc

        qps = _time_bench(six_lookup, n_queries)
    else:
        qps = 0.0
    ratio = six_elems / dense_elems if dense_elems else 0.0
    results.append(VariantResult("sixplane", six_elems, six_elems * BYTES_PER_ELEMENT, qps, ratio))

    if channels > 0:
        cfg = AudioPlaneConfig(base_res=base_res, channels=channels, scales=tuple(scales))
        ap = AudioPlane.create(cfg, seed=seed)
        a_vec = T.Tensor(rng.normal(size=channels).astype(np.float32))

        def ap_lookup(o, n):
            with T.no_grad():
                return assemble_feature(pts[o : o + n].astype(np.float32), a_vec, ap)

        qps = _time_bench(ap_lookup, n_queries)
    else:
        qps = 0.0
    ratio = ap_elems / dense_elems if dense_elems else 0.0
    results.append(VariantResult("audioplane", ap_elems, ap_elems * BYTES_PER_ELEMENT, qps, ratio))

    return BenchReport(results)
