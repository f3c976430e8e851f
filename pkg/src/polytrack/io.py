"""File formats: track annotations (JSON), PNM rasters, configs, manifests.

Every writer goes through :func:`atomic_write_bytes`, so a partially written
file never appears at its final path.
"""
from __future__ import annotations

import json
import math
import os
import re
import tempfile
from pathlib import Path
from typing import List

import numpy as np

from .errors import ParseError, SchemaError, UnsupportedFormat
from .geometry import PointSet
from .metrics import TrackAnnotation

__all__ = [
    "atomic_write_bytes",
    "atomic_write_text",
    "track_to_json",
    "track_from_json",
    "save_track",
    "load_track",
    "encode_pnm",
    "decode_pnm",
    "save_pnm",
    "load_pnm",
    "list_frames",
    "load_frames",
    "load_json",
]


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- track files ------------------------------------------------------------

def _num(x: float) -> str:
    if not math.isfinite(x):
        raise SchemaError(f"points: non-finite coordinate {x!r}")
    s = format(float(x), ".17g")
    if "e" not in s and "." not in s and "inf" not in s and "nan" not in s:
        s += ".0"
    return s


def track_to_json(ann: TrackAnnotation) -> str:
    frames = []
    for f in ann.frames:
        pts = ", ".join(f"[{_num(x)}, {_num(y)}]" for x, y in f.points)
        vis = ", ".join("true" if v else "false" for v in f.visible)
        frames.append(f'    {{"points": [{pts}], "visible": [{vis}]}}')
    body = ",\n".join(frames)
    return (f'{{\n  "version": 1,\n  "width": {int(ann.width)},\n'
            f'  "height": {int(ann.height)},\n  "frames": [\n{body}\n  ]\n}}\n')


def _require(cond, field, msg):
    if not cond:
        raise SchemaError(f"{field}: {msg}")


def track_from_json(text: str) -> TrackAnnotation:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    _require(isinstance(doc, dict), "document", "top level must be an object")
    _require(doc.get("version") == 1, "version",
             f"expected 1, got {doc.get('version')!r}")
    for key in ("width", "height"):
        val = doc.get(key)
        _require(isinstance(val, int) and not isinstance(val, bool) and val > 0,
                 key, f"expected positive integer, got {val!r}")
    frames = doc.get("frames")
    _require(isinstance(frames, list) and len(frames) > 0, "frames",
             "expected a non-empty list")
    out = []
    n = None
    for t, fr in enumerate(frames):
        where = f"frames[{t}]"
        _require(isinstance(fr, dict), where, "expected an object")
        pts = fr.get("points")
        _require(isinstance(pts, list), f"{where}.points", "expected a list")
        try:
            arr = np.array(pts, dtype=np.float64)
        except (TypeError, ValueError):
            raise SchemaError(f"{where}.points: expected [x, y] number pairs") from None
        _require(arr.ndim == 2 and arr.shape[1] == 2 or arr.size == 0,
                 f"{where}.points", "expected [x, y] pairs")
        arr = arr.reshape(-1, 2)
        _require(np.all(np.isfinite(arr)), f"{where}.points",
                 "coordinates must be finite")
        vis = fr.get("visible", [True] * len(arr))
        _require(isinstance(vis, list) and all(isinstance(v, bool) for v in vis),
                 f"{where}.visible", "expected a list of booleans")
        _require(len(vis) == len(arr), f"{where}.visible",
                 f"length {len(vis)} != point count {len(arr)}")
        if n is None:
            n = len(arr)
        _require(len(arr) == n, "frames",
                 f"all frames must have equal N (frame 0 has {n}, {where} has {len(arr)})")
        out.append(PointSet(arr, vis))
    return TrackAnnotation(doc["width"], doc["height"], out)


def save_track(path, ann: TrackAnnotation) -> None:
    atomic_write_text(path, track_to_json(ann))


def load_track(path) -> TrackAnnotation:
    with open(path, "r", encoding="utf-8") as fh:
        return track_from_json(fh.read())


# -- PNM --------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode binary P5/P6 bytes into floats in ``[0, 1]``."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"unsupported PNM magic {magic!r}")
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ParseError(f"truncated header: missing {name}")
        try:
            fields.append(int(m.group(1)))
        except ValueError:
            raise ParseError(f"bad {name} {m.group(1)!r}") from None
        pos = m.end()
    if pos >= len(data) or data[pos:pos + 1] not in b" \t\r\n":
        raise ParseError("header must end with one whitespace byte")
    pos += 1
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise ParseError(f"bad dimensions {w}x{h}")
    if not 0 < maxval < 256:
        raise UnsupportedFormat(f"maxval {maxval} (only 8-bit supported)")
    ch = 1 if magic == b"P5" else 3
    need = w * h * ch
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise ParseError(f"truncated payload: {len(payload)} of {need} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / maxval
    return arr.reshape(h, w) if ch == 1 else arr.reshape(h, w, 3)


def encode_pnm(img) -> bytes:
    """P5 for 2-D (or single-channel) input, P6 for 3-channel."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise UnsupportedFormat(f"cannot encode array of shape {arr.shape}")
    h, w = arr.shape[:2]
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def save_pnm(path, img) -> None:
    atomic_write_bytes(path, encode_pnm(img))


def load_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pnm(fh.read())


def list_frames(directory) -> List[Path]:
    d = Path(directory)
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
    return files


def load_frames(directory) -> List[np.ndarray]:
    return [load_pnm(p) for p in list_frames(directory)]


def load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: "
                         f"{exc.msg}") from None
