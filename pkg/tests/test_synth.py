import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polytrack.errors import CanvasTooSmall, EmptyMask, NoControls
from polytrack.geometry import AffineTransform
from polytrack.synth import (SynthConfig, feather_alpha, generate_default_sequence,
                             generate_sequence, mls_affine_deform,
                             mls_affine_deform_points, procedural_object,
                             procedural_texture)

STATIC = dict(object_rotation=0, object_scale=0, object_translation=0,
              background_rotation=0, background_scale=0,
              background_translation=0, mls_max_shift=0)


def _controls(rng, k=6):
    return rng.uniform(0, 100, (k, 2))


def _mls_by_formula(v, p, q):
    """Direct transcription of the weighted affine least-squares fit."""
    w = 1.0 / np.sum((p - v) ** 2, axis=1)
    ps = w @ p / w.sum()
    qs = w @ q / w.sum()
    a = sum(wi * np.outer(pi - ps, pi - ps) for wi, pi in zip(w, p))
    b = sum(wi * np.outer(pi - ps, qi - qs) for wi, pi, qi in zip(w, p, q))
    return (v - ps) @ np.linalg.solve(a, b) + qs


class TestMls:
    @pytest.mark.parametrize("seed", range(50))
    def test_identity_translation_interpolation(self, seed):
        rng = np.random.default_rng(seed)
        p = _controls(rng)
        q = p + rng.normal(0, 5, p.shape)
        v = rng.uniform(0, 100, (20, 2))
        np.testing.assert_allclose(mls_affine_deform_points(v, p, p), v, atol=1e-9)
        d = rng.uniform(-10, 10, 2)
        np.testing.assert_allclose(mls_affine_deform_points(v, p, p + d), v + d,
                                   atol=1e-9)
        for i in range(len(p)):
            np.testing.assert_allclose(mls_affine_deform(p[i], p, q), q[i], atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_formula(self, seed):
        rng = np.random.default_rng(seed)
        p = _controls(rng)
        q = p + rng.normal(0, 5, p.shape)
        v = rng.uniform(0, 100, 2)
        if np.min(np.linalg.norm(p - v, axis=1)) < 1e-3:
            return
        np.testing.assert_allclose(mls_affine_deform(v, p, q),
                                   _mls_by_formula(v, p, q), rtol=1e-9, atol=1e-9)

    def test_reproduces_global_affine(self):
        rng = np.random.default_rng(3)
        p = _controls(rng)
        a = AffineTransform.from_matrix([[1.1, 0.2, 3.0], [-0.1, 0.9, -2.0]])
        v = rng.uniform(0, 100, (10, 2))
        np.testing.assert_allclose(mls_affine_deform_points(v, p, a.apply(p)),
                                   a.apply(v), atol=1e-9)

    def test_collinear_falls_back_to_translation(self):
        p = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        q = p + [[1.0, 0.0], [3.0, 0.0], [1.0, 0.0]]
        out = mls_affine_deform([5.0, 0.0], p, q)
        assert out[1] == pytest.approx(0.0, abs=1e-12)
        assert 1.0 < out[0] - 5.0 < 3.0

    def test_two_controls_fall_back(self):
        p = np.array([[0.0, 0.0], [10.0, 0.0]])
        out = mls_affine_deform([5.0, 5.0], p, p + [2.0, -1.0])
        np.testing.assert_allclose(out, [7.0, 4.0], atol=1e-12)

    def test_no_controls(self):
        with pytest.raises(NoControls):
            mls_affine_deform([0.0, 0.0], np.zeros((0, 2)), np.zeros((0, 2)))


class TestSources:
    def test_texture_range_and_determinism(self):
        a = procedural_texture(np.random.default_rng(0), 20, 30, channels=3)
        b = procedural_texture(np.random.default_rng(0), 20, 30, channels=3)
        assert a.shape == (20, 30, 3)
        assert a.min() >= 0.0 and a.max() <= 1.0
        np.testing.assert_array_equal(a, b)

    def test_object_nonempty(self):
        mask, image = procedural_object(np.random.default_rng(0), 40)
        assert mask.shape == image.shape == (40, 40)
        assert 0.2 < mask.mean() < 0.6

    def test_feather_ramp(self):
        m = np.zeros((1, 21))
        m[0, 10:] = 1
        a = feather_alpha(m)[0]
        assert a[0] == 0.0 and a[-1] == 1.0
        assert np.all(np.diff(a) >= 0)
        # a 3 px ramp centred on the edge between columns 9 and 10
        np.testing.assert_allclose(a[9:11], [1 / 3, 2 / 3], atol=1e-12)


class TestGenerateSequence:
    def test_static_frames_identical(self):
        seq = generate_default_sequence(SynthConfig(seed=1, frames=4, **STATIC))
        for f in seq.frames[1:]:
            np.testing.assert_array_equal(f, seq.frames[0])
        for g in seq.gt.frames[1:]:
            assert g == seq.gt.frames[0]

    @pytest.mark.parametrize("seed", range(5))
    def test_gt_equals_composed_transforms(self, seed):
        cfg = SynthConfig(seed=seed, frames=6, points=32, objects=2,
                          mls_max_shift=0, object_rotation=10, object_translation=8)
        seq = generate_default_sequence(cfg)
        p0 = seq.gt.frames[0].points
        for t, g in enumerate(seq.gt.frames):
            np.testing.assert_allclose(seq.transforms[t][0].apply(p0), g.points,
                                       rtol=0, atol=1e-9)

    def test_gt_consistent_with_mls(self):
        cfg = SynthConfig(seed=4, frames=3, mls_max_shift=4.0)
        seq = generate_default_sequence(cfg)
        p0 = seq.gt.frames[0].points
        for t, g in enumerate(seq.gt.frames):
            np.testing.assert_allclose(seq.transforms[t][0].apply(p0), g.points,
                                       atol=1e-9)

    def test_gt_tracks_mask_boundary(self):
        seq = generate_default_sequence(SynthConfig(seed=2, frames=4))
        for g, m in zip(seq.gt.frames, seq.masks):
            ix = np.clip(np.rint(g.points).astype(int), 0, 127)
            # every gt point lies within 1.5 px of the object mask
            near = [m[max(y - 1, 0):y + 2, max(x - 1, 0):x + 2].any() for x, y in ix]
            assert np.mean(near) == 1.0

    def test_determinism(self):
        cfg = SynthConfig(seed=9, frames=3, objects=2, mls_max_shift=3.0)
        a = generate_default_sequence(cfg)
        b = generate_default_sequence(cfg)
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa, fb)
        for ga, gb in zip(a.gt.frames, b.gt.frames):
            assert ga == gb

    def test_visibility_matches_canvas(self):
        # a large object drifting fast leaves the canvas in some frames
        cfg = SynthConfig(seed=1, frames=8, canvas=(64, 64), object_translation=12,
                          background_translation=0)
        seq = generate_default_sequence(cfg, object_size=48)
        hidden = 0
        for g in seq.gt.frames:
            x, y = g.points.T
            inside = (x >= 0) & (x <= 63) & (y >= 0) & (y <= 63)
            np.testing.assert_array_equal(g.visible, inside)
            hidden += int((~inside).sum())
        assert hidden > 0

    def test_shapes(self):
        seq = generate_default_sequence(SynthConfig(seed=0, frames=3, points=20,
                                                    canvas=(96, 64), channels=3))
        assert len(seq.frames) == 3
        assert seq.frames[0].shape == (64, 96, 3)
        assert seq.gt.n_points == 20
        assert (seq.gt.width, seq.gt.height) == (96, 64)
        assert all(0.0 <= f.min() and f.max() <= 1.0 for f in seq.frames)

    def test_black_outside_source(self):
        # background no larger than the canvas and shifted: exposed area is 0
        cfg = SynthConfig(seed=0, frames=2, canvas=(40, 40), object_rotation=0,
                          object_scale=0, object_translation=0,
                          background_rotation=0, background_scale=0,
                          background_translation=5)
        mask, image = procedural_object(np.random.default_rng(0), 16)
        seq = generate_sequence(cfg, mask, image, np.full((40, 40), 0.5))
        f = seq.frames[1]
        tx, ty = seq.background_transforms[1].params[4:]
        assert max(abs(tx), abs(ty)) > 1.0
        if abs(tx) > 1.0:
            col = 0 if tx > 0 else 39
            assert np.all(f[:, col] == 0.0)
        if abs(ty) > 1.0:
            row = 0 if ty > 0 else 39
            assert np.all(f[row] == 0.0)

    def test_empty_mask(self):
        with pytest.raises(EmptyMask):
            generate_sequence(SynthConfig(canvas=(16, 16)), np.zeros((8, 8)),
                              np.zeros((8, 8)), np.zeros((16, 16)))

    def test_canvas_too_small(self):
        mask, image = procedural_object(np.random.default_rng(0), 16)
        with pytest.raises(CanvasTooSmall):
            generate_sequence(SynthConfig(canvas=(64, 64)), mask, image,
                              np.zeros((32, 32)))

    @pytest.mark.parametrize("kw", [dict(frames=1), dict(points=2), dict(objects=3),
                                    dict(object_rotation=-1.0)])
    def test_config_invariants(self, kw):
        with pytest.raises(ValueError):
            SynthConfig(**kw)

    def test_config_dict_round_trip(self):
        cfg = SynthConfig(seed=3, canvas=(80, 60), objects=2)
        assert SynthConfig.from_dict(cfg.to_dict()) == cfg


class TestMlsAtControls:
    def test_three_controls_evaluated_at_controls(self):
        # the weight of the hit control is dropped, leaving two controls
        p = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        q = p + [[1.0, 2.0], [-1.0, 0.5], [0.0, 3.0]]
        v = np.vstack([p, [[3.0, 3.0]]])
        out = mls_affine_deform_points(v, p, q)
        np.testing.assert_array_equal(out[:3], q)
        assert np.all(np.isfinite(out[3]))
