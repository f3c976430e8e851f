import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polytrack.errors import ParseError, SchemaError, UnsupportedFormat
from polytrack.geometry import PointSet
from polytrack.io import (atomic_write_bytes, decode_pnm, encode_pnm, list_frames,
                          load_frames, load_json, load_pnm, load_track, save_pnm,
                          save_track, track_from_json, track_to_json)
from polytrack.metrics import TrackAnnotation


def _random_track(rng, frames=3, n=5):
    fs = [PointSet(rng.normal(0, 1e3, (n, 2)) * rng.random((n, 2)) ** 7,
                   rng.random(n) < 0.7) for _ in range(frames)]
    return TrackAnnotation(int(rng.integers(1, 5000)), int(rng.integers(1, 5000)), fs)


def _doc(**over):
    d = {"version": 1, "width": 4, "height": 3,
         "frames": [{"points": [[0, 0], [1, 2.5]], "visible": [True, False]}]}
    d.update(over)
    return json.dumps(d)


class TestTrackFile:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(0, 9))
    def test_lossless_round_trip(self, seed, frames, n):
        ann = _random_track(np.random.default_rng(seed), frames, n)
        back = track_from_json(track_to_json(ann))
        assert (back.width, back.height) == (ann.width, ann.height)
        assert back.frames == ann.frames

    def test_extreme_values_round_trip(self):
        pts = [[5e-324, -1.7976931348623157e308], [0.1, 1 / 3], [-0.0, 1e-17]]
        ann = TrackAnnotation(2, 2, [PointSet(pts)])
        back = track_from_json(track_to_json(ann))
        np.testing.assert_array_equal(back.frames[0].points, ann.frames[0].points)

    def test_file_round_trip(self, tmp_path):
        ann = _random_track(np.random.default_rng(0))
        save_track(tmp_path / "t.json", ann)
        assert load_track(tmp_path / "t.json").frames == ann.frames
        doc = json.loads((tmp_path / "t.json").read_text())
        assert doc["version"] == 1 and len(doc["frames"]) == 3

    def test_visible_defaults_true(self):
        ann = track_from_json('{"version":1,"width":2,"height":2,'
                              '"frames":[{"points":[[0,0],[1,1]]}]}')
        assert ann.frames[0].visible.all()

    def test_version_2(self):
        with pytest.raises(SchemaError, match="version"):
            track_from_json(_doc(version=2))

    def test_unequal_n(self):
        frames = [{"points": [[0, 0], [1, 1]]}, {"points": [[0, 0]]}]
        with pytest.raises(SchemaError, match="equal N"):
            track_from_json(_doc(frames=frames))

    def test_parse_error_has_location(self):
        with pytest.raises(ParseError, match="line 2"):
            track_from_json('{"version": 1,\n  "width": }')

    @pytest.mark.parametrize("over, field", [
        (dict(width=0), "width"),
        (dict(height="3"), "height"),
        (dict(frames=[]), "frames"),
        (dict(frames=[{"points": [[0, 0, 0]]}]), "points"),
        (dict(frames=[{"points": [[0, 0]], "visible": [1]}]), "visible"),
        (dict(frames=[{"points": [[0, 0]], "visible": [True, True]}]), "visible"),
        (dict(frames=[{"points": "no"}]), "points"),
    ])
    def test_schema_errors_name_field(self, over, field):
        with pytest.raises(SchemaError, match=field):
            track_from_json(_doc(**over))

    def test_non_finite(self):
        with pytest.raises(SchemaError, match="finite"):
            track_from_json(_doc(frames=[{"points": [[0, float("nan")]]}]))

    def test_top_level_not_object(self):
        with pytest.raises(SchemaError):
            track_from_json("[1, 2]")


class TestPnm:
    def test_p5_example(self):
        data = b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64])
        np.testing.assert_array_equal(decode_pnm(data),
                                      [[0, 1], [128 / 255, 64 / 255]])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.integers(1, 9),
           st.sampled_from([1, 3]))
    def test_byte_exact_round_trip(self, seed, w, h, ch):
        rng = np.random.default_rng(seed)
        shape = (h, w) if ch == 1 else (h, w, 3)
        raw = rng.integers(0, 256, shape, dtype=np.uint8)
        img = decode_pnm(encode_pnm(raw / 255.0))
        np.testing.assert_array_equal(np.rint(img * 255).astype(np.uint8), raw)
        assert encode_pnm(img) == encode_pnm(raw / 255.0)

    def test_header_comments(self):
        data = b"P6 # colour\n# size next\n1 1\n255\n" + bytes([10, 20, 30])
        np.testing.assert_allclose(decode_pnm(data)[0, 0], np.array([10, 20, 30]) / 255)

    def test_file_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, (4, 5, 3)) / 255.0
        save_pnm(tmp_path / "a.ppm", img)
        np.testing.assert_array_equal(load_pnm(tmp_path / "a.ppm"), img)

    def test_truncated_payload(self):
        with pytest.raises(ParseError):
            decode_pnm(b"P5\n2 2\n255\n" + bytes([0, 1, 2]))

    def test_truncated_header(self):
        with pytest.raises(ParseError):
            decode_pnm(b"P5\n2 ")

    @pytest.mark.parametrize("magic", [b"P4", b"P1", b"P2", b"P3", b"GIF8"])
    def test_unsupported_magic(self, magic):
        with pytest.raises(UnsupportedFormat):
            decode_pnm(magic + b"\n1 1\n255\n\x00")

    def test_sixteen_bit_unsupported(self):
        with pytest.raises(UnsupportedFormat):
            decode_pnm(b"P5\n1 1\n65535\n\x00\x00")

    def test_bad_dimension(self):
        with pytest.raises(ParseError):
            decode_pnm(b"P5\nx 1\n255\n\x00")

    def test_encode_bad_shape(self):
        with pytest.raises(UnsupportedFormat):
            encode_pnm(np.zeros((2, 2, 2)))


class TestFilesystem:
    def test_atomic_write_leaves_no_temp(self, tmp_path):
        atomic_write_bytes(tmp_path / "sub" / "f.bin", b"abc")
        assert (tmp_path / "sub" / "f.bin").read_bytes() == b"abc"
        assert os.listdir(tmp_path / "sub") == ["f.bin"]

    def test_failed_write_keeps_old_file(self, tmp_path, monkeypatch):
        target = tmp_path / "t.json"
        target.write_text("old")

        def boom(fd):
            raise OSError("disk full")

        # fail after the payload is written to the temp file
        monkeypatch.setattr(os, "fsync", boom)
        with pytest.raises(OSError):
            save_track(target, _random_track(np.random.default_rng(0)))
        assert target.read_text() == "old"
        assert os.listdir(tmp_path) == ["t.json"]

    def test_frames_sorted(self, tmp_path):
        for i in (2, 0, 1):
            save_pnm(tmp_path / f"{i:05d}.pgm", np.full((2, 2), i / 4))
        (tmp_path / "notes.txt").write_text("x")
        assert [p.name for p in list_frames(tmp_path)] == \
            ["00000.pgm", "00001.pgm", "00002.pgm"]
        assert [f[0, 0] for f in load_frames(tmp_path)] == [0, 64 / 255, 128 / 255]

    def test_load_json_parse_error(self, tmp_path):
        (tmp_path / "c.json").write_text("{bad")
        with pytest.raises(ParseError):
            load_json(tmp_path / "c.json")
