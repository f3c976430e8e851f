import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polytrack.errors import (NoVisiblePoints, ShapeMismatch, SizeMismatch,
                              TooFewFrames)
from polytrack.geometry import PointSet
from polytrack.metrics import (TrackAnnotation, average_accuracy,
                               boundary_accuracy, evaluate, region_similarity,
                               sequence_stats, spatial_accuracy,
                               temporal_accuracy)

TAUS = [0.01, 0.02, 0.04, 0.08, 0.16, 0.32]


def _ann(pts, vis=None, w=60, h=80):
    # 60 x 80 raster has diagonal exactly 100
    pts = np.asarray(pts, dtype=float)
    if vis is None:
        vis = np.ones(pts.shape[:2], dtype=bool)
    return TrackAnnotation(w, h, [PointSet(p, v) for p, v in zip(pts, vis)])


def _random_track(rng, t=5, n=10):
    return rng.uniform(0, 60, (t, n, 2))


class TestTrackAnnotation:
    def test_diagonal(self):
        assert _ann(np.zeros((1, 3, 2))).diagonal == 100.0

    def test_unequal_n(self):
        with pytest.raises(ValueError):
            TrackAnnotation(5, 5, [PointSet(np.zeros((3, 2))), PointSet(np.zeros((4, 2)))])

    def test_needs_a_frame(self):
        with pytest.raises(ValueError):
            TrackAnnotation(5, 5, [])


class TestSpatialAccuracy:
    def test_perfect(self):
        gt = _ann(_random_track(np.random.default_rng(0)))
        for tau in TAUS:
            assert spatial_accuracy(gt, gt, tau) == 1.0

    def test_half(self):
        gt = _ann([[[10, 10], [20, 20]]])
        pred = _ann([[[11, 10], [30, 20]]])
        assert spatial_accuracy(pred, gt, 0.04) == 0.5

    def test_all_wrong(self):
        gt = _ann([[[10, 10], [20, 20]]])
        pred = _ann([[[14, 10], [30, 20]]])  # 4 px is not < 4 px
        assert spatial_accuracy(pred, gt, 0.04) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            spatial_accuracy(_ann(np.zeros((2, 3, 2))), _ann(np.zeros((2, 4, 2))), 0.1)

    def test_no_visible(self):
        gt = _ann(np.zeros((1, 3, 2)), np.zeros((1, 3), bool))
        with pytest.raises(NoVisiblePoints):
            spatial_accuracy(gt, gt, 0.1)

    def test_invisible_points_excluded(self):
        gt_pts = np.array([[[10, 10], [20, 20], [30, 30]]], float)
        pred_pts = gt_pts.copy()
        pred_pts[0, 2] += 50
        vis = np.array([[True, True, True]])
        assert spatial_accuracy(_ann(pred_pts), _ann(gt_pts, vis), 0.04) == \
            pytest.approx(2 / 3)
        vis[0, 2] = False
        assert spatial_accuracy(_ann(pred_pts), _ann(gt_pts, vis), 0.04) == 1.0
        # the flag on the prediction is irrelevant
        assert spatial_accuracy(_ann(pred_pts, ~vis), _ann(gt_pts, vis), 0.04) == 1.0


class TestTemporalAccuracy:
    def test_constant_offset(self):
        rng = np.random.default_rng(1)
        g = _random_track(rng)
        off = rng.normal(0, 30, (1, g.shape[1], 2))
        for tau in TAUS:
            assert temporal_accuracy(_ann(g + off), _ann(g), tau) == 1.0
            assert spatial_accuracy(_ann(g + off), _ann(g), 0.01) < 1.0

    def test_jump(self):
        gt = _ann([[[10, 10]], [[10, 10]]])
        pred = _ann([[[10, 10]], [[20, 10]]])
        assert temporal_accuracy(pred, gt, 0.04) == 0.0

    def test_too_few_frames(self):
        gt = _ann(np.zeros((1, 3, 2)))
        with pytest.raises(TooFewFrames):
            temporal_accuracy(gt, gt, 0.1)

    def test_visibility_needs_both_frames(self):
        gt_pts = np.zeros((2, 2, 2))
        pred = gt_pts.copy()
        pred[1, 0] += 20  # point 0 jumps
        vis = np.ones((2, 2), bool)
        assert temporal_accuracy(_ann(pred), _ann(gt_pts, vis), 0.04) == 0.5
        vis[0, 0] = False  # invisible in the earlier frame only
        assert temporal_accuracy(_ann(pred), _ann(gt_pts, vis), 0.04) == 1.0


class TestThresholdMonotone:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_and_saturating(self, seed):
        rng = np.random.default_rng(seed)
        g = _random_track(rng)
        p = g + rng.normal(0, 5, g.shape)
        vis = rng.random(g.shape[:2]) > 0.2
        vis[0, 0] = vis[1, 0] = True
        gt, pred = _ann(g, vis), _ann(p)
        sa = [spatial_accuracy(pred, gt, t) for t in TAUS]
        ta = [temporal_accuracy(pred, gt, t) for t in TAUS]
        assert all(a <= b for a, b in zip(sa, sa[1:]))
        assert all(a <= b for a, b in zip(ta, ta[1:]))
        assert spatial_accuracy(pred, gt, 10.0) == 1.0
        assert temporal_accuracy(pred, gt, 10.0) == 1.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 9))
    def test_relabel_invariance(self, seed, k):
        rng = np.random.default_rng(seed)
        g = _random_track(rng)
        p = g + rng.normal(0, 3, g.shape)
        for tau in (0.02, 0.08):
            a = spatial_accuracy(_ann(p), _ann(g), tau)
            b = spatial_accuracy(_ann(np.roll(p, k, 1)), _ann(np.roll(g, k, 1)), tau)
            assert a == b
            a = temporal_accuracy(_ann(p), _ann(g), tau)
            b = temporal_accuracy(_ann(np.roll(p, k, 1)), _ann(np.roll(g, k, 1)), tau)
            assert a == b


def _square_mask(shape, r0, c0, size):
    m = np.zeros(shape)
    m[r0:r0 + size, c0:c0 + size] = 1
    return m


class TestMaskMetrics:
    def test_iou_examples(self):
        a = _square_mask((6, 6), 1, 1, 2)
        assert region_similarity(a, a) == 1.0
        assert region_similarity(a, _square_mask((6, 6), 4, 4, 2)) == 0.0
        assert region_similarity(a, _square_mask((6, 6), 1, 2, 2)) == pytest.approx(2 / 6)
        assert region_similarity(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    def test_size_mismatch(self):
        for fn in (region_similarity, boundary_accuracy, average_accuracy):
            with pytest.raises(SizeMismatch):
                fn(np.zeros((3, 3)), np.zeros((3, 4)))

    def test_boundary_examples(self):
        sq = _square_mask((20, 20), 5, 5, 8)
        assert boundary_accuracy(sq, sq) == 1.0
        assert boundary_accuracy(np.zeros_like(sq), sq) == 0.0
        # dilation by the 4-neighbourhood keeps every new boundary pixel at
        # distance exactly 1 from the old boundary
        dilated = sq.copy()
        dilated[4, 5:13] = dilated[13, 5:13] = 1
        dilated[5:13, 4] = dilated[5:13, 13] = 1
        assert math.ceil(0.008 * math.hypot(20, 20)) >= 1
        assert boundary_accuracy(dilated, sq) == 1.0

    def test_boundary_far_apart(self):
        a = _square_mask((100, 100), 5, 5, 10)
        b = _square_mask((100, 100), 60, 60, 10)
        assert boundary_accuracy(a, b) == 0.0

    def test_boundary_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            a = (rng.random((15, 15)) > 0.6).astype(float)
            b = (rng.random((15, 15)) > 0.6).astype(float)
            assert boundary_accuracy(a, b) == pytest.approx(_f_oracle(a, b), abs=1e-12)

    def test_average_accuracy(self):
        a = _square_mask((10, 10), 2, 2, 4)
        assert average_accuracy(a, a) == 1.0
        assert average_accuracy(a, 1 - a) == 0.0
        b = a.copy()
        b[0, 0] = 1
        assert average_accuracy(a, b) == pytest.approx(0.99)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = (rng.random((12, 12)) > 0.5).astype(float)
        b = (rng.random((12, 12)) > 0.5).astype(float)
        for fn in (region_similarity, boundary_accuracy, average_accuracy):
            assert fn(a, b) == pytest.approx(fn(b, a), abs=1e-15)


def _f_oracle(a, b):
    def boundary(m):
        h, w = m.shape
        out = []
        for r in range(h):
            for c in range(w):
                if not m[r, c]:
                    continue
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    rr, cc = r + dr, c + dc
                    if not (0 <= rr < h and 0 <= cc < w) or not m[rr, cc]:
                        out.append((r, c))
                        break
        return out

    ba, bb = boundary(a > 0.5), boundary(b > 0.5)
    if not ba and not bb:
        return 1.0
    if not ba or not bb:
        return 0.0
    rad = math.ceil(0.008 * math.hypot(*a.shape))

    def hits(src, dst):
        return sum(any(math.dist(p, q) <= rad for q in dst) for p in src)

    prec = hits(ba, bb) / len(ba)
    rec = hits(bb, ba) / len(bb)
    return 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)


class TestSequenceStats:
    def test_static(self):
        g = np.tile(np.random.default_rng(0).uniform(0, 50, (1, 6, 2)), (4, 1, 1))
        assert sequence_stats(_ann(g)) == (0.0, 0.0)

    def test_translation(self):
        g0 = np.random.default_rng(0).uniform(0, 50, (6, 2))
        g = np.stack([g0, g0 + [0.01 * 60, 0.0]])
        mo, sc = sequence_stats(_ann(g))
        assert mo == pytest.approx(0.01, abs=1e-12)
        assert sc == pytest.approx(0.0, abs=1e-12)

    def test_mean_over_transitions_oracle(self):
        rng = np.random.default_rng(5)
        g = rng.uniform(0, 50, (4, 5, 2))
        mo, sc = sequence_stats(_ann(g))
        q = g / [60.0, 80.0]
        steps, dl = [], []
        for t in range(1, 4):
            for i in range(5):
                steps.append(math.dist(q[t, i], q[t - 1, i]))
                dl.append(abs(math.dist(q[t, i], q[t, i - 1])
                              - math.dist(q[t - 1, i], q[t - 1, i - 1])))
        assert mo == pytest.approx(np.mean(steps), rel=1e-12)
        assert sc == pytest.approx(np.mean(dl), rel=1e-12)

    def test_too_few_frames(self):
        with pytest.raises(TooFewFrames):
            sequence_stats(_ann(np.zeros((1, 3, 2))))


class TestEvaluate:
    def test_perfect_report(self):
        g = np.array([[[10, 10], [40, 10], [40, 50], [10, 50]]] * 3, float)
        rep = evaluate(_ann(g), _ann(g))
        assert set(rep.sa.values()) == {1.0}
        assert set(rep.ta.values()) == {1.0}
        assert rep.j == rep.f == rep.avg_acc == 1.0
        d = rep.to_dict()
        assert set(d["sa"]) == {"0.04", "0.08", "0.16"}

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(9)
        g = np.array([[[10, 10], [40, 10], [40, 50], [10, 50]]] * 3, float)
        p = g + rng.normal(0, 4, g.shape)
        rep = evaluate(_ann(p), _ann(g))
        for v in list(rep.sa.values()) + list(rep.ta.values()) + [rep.j, rep.f,
                                                                  rep.avg_acc]:
            assert 0.0 <= v <= 1.0
