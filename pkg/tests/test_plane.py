import numpy as np
import pytest

from audiosplat import tensor as T
from oracles import assemble_oracle
from audiosplat.plane import (
    AudioPlane,
    AudioPlaneConfig,
    TRIPLES,
    assemble_feature,
    attention_weights,
    audio_attend,
    param_count,
    sample_line,
    sample_plane,
)


def small_plane(fusion="concat", seed=0, base_res=6, channels=4, scales=(1, 2)):
    cfg = AudioPlaneConfig(base_res=base_res, channels=channels, scales=scales, fusion=fusion)
    return AudioPlane.create(cfg, seed=seed, dtype=np.float64)


def test_sample_plane_node_and_center():
    rng = np.random.default_rng(0)
    grid = T.Tensor(rng.normal(size=(5, 5, 3)))
    out = sample_plane(grid, np.array([0.5]), np.array([0.25]))  # node (2,1)
    assert np.allclose(out.data[0], grid.data[2, 1], atol=1e-12)
    center = sample_plane(grid, np.array([0.125]), np.array([0.125]))  # cell center
    expected = 0.25 * (grid.data[0, 0] + grid.data[0, 1] + grid.data[1, 0] + grid.data[1, 1])
    assert np.allclose(center.data[0], expected, atol=1e-12)


def test_sample_plane_matches_bilinear_oracle():
    rng = np.random.default_rng(1)
    grid = rng.normal(size=(7, 7, 2))
    for case in range(10):
        u, v = rng.uniform(0, 1, 2)
        x, y = u * 6, v * 6
        i0, j0 = min(int(x), 5), min(int(y), 5)
        fx, fy = x - i0, y - j0
        expected = (
            grid[i0, j0] * (1 - fx) * (1 - fy)
            + grid[i0, j0 + 1] * (1 - fx) * fy
            + grid[i0 + 1, j0] * fx * (1 - fy)
            + grid[i0 + 1, j0 + 1] * fx * fy
        )
        out = sample_plane(T.Tensor(grid), np.array([u]), np.array([v]))
        assert np.max(np.abs(out.data[0] - expected)) < 1e-12


def test_sample_line_node_midpoint_oracle():
    rng = np.random.default_rng(2)
    line = rng.normal(size=(5, 3))
    assert np.allclose(sample_line(T.Tensor(line), np.array([0.25])).data[0], line[1], atol=1e-12)
    mid = sample_line(T.Tensor(line), np.array([0.375]))
    assert np.allclose(mid.data[0], 0.5 * (line[1] + line[2]), atol=1e-12)
    for _ in range(10):
        u = rng.uniform(0, 1)
        x = u * 4
        i0 = min(int(x), 3)
        expected = line[i0] * (1 - (x - i0)) + line[i0 + 1] * (x - i0)
        out = sample_line(T.Tensor(line), np.array([u]))
        assert np.max(np.abs(out.data[0] - expected)) < 1e-12


def test_attend_value_degeneracy():
    v = np.array([0.3, -0.2, 0.5, 0.1])
    proto = T.Tensor(np.tile(v, (6, 1)))
    for a in (np.zeros(4), np.array([3.0, -1.0, 0.5, 2.0])):
        out = audio_attend(T.Tensor(a), proto)
        assert np.allclose(out.data, v, atol=1e-12)


def test_attend_single_row():
    row = np.array([[1.0, 2.0, 3.0, 4.0]])
    out = audio_attend(T.Tensor(np.array([0.5, 0.5, 0.5, 0.5])), T.Tensor(row))
    assert np.allclose(out.data, row[0], atol=1e-12)


def test_attend_matches_direct_softmax_oracle():
    rng = np.random.default_rng(3)
    for case in range(10):
        proto = rng.normal(size=(8, 4))
        a = rng.normal(size=4)
        scores = proto @ a / np.sqrt(4)
        w = np.exp(scores - scores.max())
        w /= w.sum()
        expected = w @ proto
        out = audio_attend(T.Tensor(a), T.Tensor(proto))
        assert np.max(np.abs(out.data - expected)) < 1e-12


def test_attention_weights_sum_to_one():
    rng = np.random.default_rng(4)
    w = attention_weights(T.Tensor(rng.normal(size=4)), T.Tensor(rng.normal(size=(9, 4))))
    assert abs(w.sum() - 1.0) < 1e-6


def test_assemble_multiply_identity():
    ap = small_plane(fusion="multiply")
    for lines in ap.lines:
        for l in lines:
            l.data[:] = 1.0
    for proto in ap.protos:
        proto.data[:] = 1.0
    pts = np.random.default_rng(5).uniform(0.1, 0.9, (4, 3))
    a = T.Tensor(np.random.default_rng(6).normal(size=4))
    feat = assemble_feature(pts, a, ap).data
    # equals plain concatenated tri-plane samples
    expected = []
    for planes_s in ap.planes:
        for (i, j, k), plane in zip(TRIPLES, planes_s):
            expected.append(sample_plane(plane, pts[:, i], pts[:, j]).data)
    expected = np.concatenate(expected, axis=1)
    assert np.max(np.abs(feat - expected)) < 1e-12


def test_assemble_add_identity():
    ap = small_plane(fusion="add")
    for lines in ap.lines:
        for l in lines:
            l.data[:] = 0.0
    pts = np.random.default_rng(7).uniform(0.1, 0.9, (3, 3))
    a = T.Tensor(np.random.default_rng(8).normal(size=4))
    feat = assemble_feature(pts, a, ap).data
    expected = []
    for planes_s in ap.planes:
        for (i, j, k), plane in zip(TRIPLES, planes_s):
            expected.append(sample_plane(plane, pts[:, i], pts[:, j]).data)
    expected = np.concatenate(expected, axis=1)
    assert np.max(np.abs(feat - expected)) < 1e-12


def test_assemble_concat_matches_independent_oracle():
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        ap = small_plane(fusion="concat", seed=seed)
        for p in ap.parameters():
            p.data[:] = rng.normal(size=p.data.shape)
        pts = rng.uniform(0.02, 0.98, (5, 3))
        a = rng.normal(size=4)
        feat = assemble_feature(pts, T.Tensor(a), ap).data
        expected = assemble_oracle(pts, a, ap)
        assert feat.shape == (5, ap.feature_width())
        assert np.max(np.abs(feat - expected)) < 1e-6


def test_feature_width_by_fusion():
    assert small_plane("concat").feature_width() == 2 * 4 * 3 * 2
    assert small_plane("multiply").feature_width() == 4 * 3 * 2
    assert small_plane("add").feature_width() == 4 * 3 * 2


def test_audio_locality_in_channel_layout():
    # multiply fusion with zeroed triple-1 planes: audio perturbation leaves
    # triple-1 channels at zero and only moves triples 2-3
    ap = small_plane(fusion="multiply", scales=(1,))
    ap.planes[0][0].data[:] = 0.0
    pts = np.random.default_rng(9).uniform(0.1, 0.9, (3, 3))
    a1 = np.random.default_rng(10).normal(size=4)
    a2 = a1 + 0.5
    f1 = assemble_feature(pts, T.Tensor(a1), ap).data
    f2 = assemble_feature(pts, T.Tensor(a2), ap).data
    d = ap.config.channels
    assert np.allclose(f1[:, :d], 0.0) and np.allclose(f2[:, :d], 0.0)
    assert np.any(np.abs(f1[:, d:] - f2[:, d:]) > 1e-9)


def test_param_count_reference_values():
    assert param_count(64, 16, (1, 2, 3, 4), "audioplane") == 5_939_200
    assert param_count(64, 16, (1, 2, 3, 4), "dense4d", t_res=64) == 268_435_456
    assert param_count(64, 0, (1, 2, 3, 4), "audioplane") == 0
    assert param_count(64, 0, (1, 2, 3, 4), "dense4d", t_res=64) == 0
    ratio = param_count(64, 16, (1, 2, 3, 4), "audioplane") / param_count(
        64, 16, (1, 2, 3, 4), "dense4d", t_res=64
    )
    assert ratio < 0.03
    assert abs(ratio - 0.0221) < 2e-3


def test_sixplane_exceeds_audioplane():
    six = param_count(32, 8, (1, 2), "sixplane", t_res=32)
    ap = param_count(32, 8, (1, 2), "audioplane")
    assert six > ap


def test_assemble_gradients_pass_fd():
    ap = small_plane(fusion="concat", seed=3)
    rng = np.random.default_rng(11)
    for p in ap.parameters():
        p.data[:] = rng.uniform(-0.6, 0.6, p.data.shape)
    pts = T.Parameter(rng.uniform(0.1, 0.9, (4, 3)), "pts")
    a = T.Parameter(rng.normal(size=4) * 0.5, "a")
    w = rng.uniform(-0.7, 0.7, (4, ap.feature_width()))

    def build():
        return T.tsum(T.mul(assemble_feature(pts, a, ap), T.Tensor(w)))

    report = T.finite_difference_check(build, [pts, a] + ap.parameters())
    assert report.passed, report


def test_bad_fusion_rejected():
    with pytest.raises(ValueError):
        AudioPlaneConfig(base_res=4, channels=2, scales=(1,), fusion="sum")
