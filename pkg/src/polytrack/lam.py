"""Local alignment network as explicit numpy kernels with manual backprop.

The network maps per-point feature vectors to per-point 2-D offsets:

    features ++ cyclic encoding
      -> B blocks of [circular conv, circular conv, multi-head attention]
      -> concat(block outputs) -> 1x1 fusion -> max over points (global)
      -> concat(fused, global) -> LSTM cell (state carried between calls)
      -> two-layer head -> (N, 2) offsets

Forward passes are written so that a cyclic relabelling of the input points
relabels every output bit-exactly: channel contractions go through
``np.einsum`` (row-independent accumulation) and every reduction over the
point axis is accumulated in an order that starts at the query point.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import ShapeMismatch, ParseError
from .geometry import PointSet, bilinear_sample

__all__ = [
    "LamConfig",
    "LamParams",
    "LamState",
    "cyclic_positional_encoding",
    "circular_conv",
    "multi_head_attention",
    "lstm_step",
    "sample_point_features",
    "lam_forward",
    "lam_backward",
    "save_checkpoint",
    "load_checkpoint",
]


def _dense(x, w):
    return np.einsum("nc,cd->nd", x, w)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def cyclic_positional_encoding(i, n: int) -> np.ndarray:
    """``[sin(2 pi i / n), cos(2 pi i / n)]``; ``i`` may be an index array."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ang = 2.0 * np.pi * (np.asarray(i, dtype=np.float64) % n) / n
    return np.stack([np.sin(ang), np.cos(ang)], axis=-1)


# -- circular convolution ---------------------------------------------------

def circular_conv(x, weight, bias=None):
    """Cyclic 1-D convolution over the point axis.

    ``weight`` has shape ``(k, C_in, C_out)`` with odd ``k``; tap ``m`` reads
    the point at offset ``m - (k - 1) / 2``. A 1-D ``weight`` of length ``k``
    is accepted for single-channel input.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    w = np.asarray(weight, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None, None]
    k = w.shape[0]
    if k % 2 != 1:
        raise ShapeMismatch(f"kernel width must be odd, got {k}")
    if w.shape[1] != x.shape[1]:
        raise ShapeMismatch(
            f"kernel expects {w.shape[1]} channels, input has {x.shape[1]}")
    half = (k - 1) // 2
    out = np.zeros((x.shape[0], w.shape[2]))
    for m in range(k):
        out = out + _dense(np.roll(x, -(m - half), axis=0), w[m])
    if bias is not None:
        out = out + bias
    return out


def _circular_conv_backward(x, w, dout):
    k = w.shape[0]
    half = (k - 1) // 2
    dw = np.empty_like(w)
    dx = np.zeros_like(x)
    for m in range(k):
        d = m - half
        xs = np.roll(x, -d, axis=0)
        dw[m] = xs.T @ dout
        dx += np.roll(dout @ w[m].T, d, axis=0)
    return dx, dw, dout.sum(axis=0)


# -- attention --------------------------------------------------------------

def _rotated(a):
    """``r[i, m] = a[i, (i + m) % N]`` for the leading two axes."""
    n = a.shape[0]
    idx = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
    return a[np.arange(n)[:, None], idx]


def _softmax_rows(s):
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    denom = _rotated(e).sum(axis=1, keepdims=True)
    return e / denom


def multi_head_attention(x, heads: int, params: dict, residual: bool = True,
                         return_cache: bool = False):
    """Scaled dot-product self-attention over the points.

    ``params`` holds ``wq, wk, wv, wo`` of shape ``(C, C)`` and optional
    biases ``bq, bk, bv, bo``.
    """
    x = np.asarray(x, dtype=np.float64)
    n, c = x.shape
    if c % heads:
        raise ShapeMismatch(f"{c} channels not divisible by {heads} heads")
    for key in ("wq", "wk", "wv", "wo"):
        if params[key].shape != (c, c):
            raise ShapeMismatch(f"{key} has shape {params[key].shape}, "
                                f"expected {(c, c)}")
    d = c // heads
    zeros = np.zeros(c)
    q = _dense(x, params["wq"]) + params.get("bq", zeros)
    k = _dense(x, params["wk"]) + params.get("bk", zeros)
    v = _dense(x, params["wv"]) + params.get("bv", zeros)
    scale = 1.0 / np.sqrt(d)
    o = np.empty_like(q)
    attn = []
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        s = np.einsum("id,jd->ij", q[:, sl], k[:, sl]) * scale
        a = _softmax_rows(s)
        prods = a[:, :, None] * v[None, :, sl]       # (N, N, d)
        o[:, sl] = _rotated(prods).sum(axis=1)
        attn.append(a)
    y = _dense(o, params["wo"]) + params.get("bo", zeros)
    out = x + y if residual else y
    if return_cache:
        return out, (x, q, k, v, attn, o, heads)
    return out


def _mha_backward(params, cache, dout, residual=True):
    x, q, k, v, attn, o, heads = cache
    c = x.shape[1]
    d = c // heads
    scale = 1.0 / np.sqrt(d)
    g = {}
    g["wo"] = o.T @ dout
    g["bo"] = dout.sum(axis=0)
    do = dout @ params["wo"].T
    dq = np.empty_like(q)
    dk = np.empty_like(k)
    dv = np.empty_like(v)
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        a = attn[h]
        da = do[:, sl] @ v[:, sl].T
        dv[:, sl] = a.T @ do[:, sl]
        ds = a * (da - np.sum(da * a, axis=1, keepdims=True)) * scale
        dq[:, sl] = ds @ k[:, sl]
        dk[:, sl] = ds.T @ q[:, sl]
    g["wq"] = x.T @ dq
    g["wk"] = x.T @ dk
    g["wv"] = x.T @ dv
    g["bq"] = dq.sum(axis=0)
    g["bk"] = dk.sum(axis=0)
    g["bv"] = dv.sum(axis=0)
    dx = dq @ params["wq"].T + dk @ params["wk"].T + dv @ params["wv"].T
    if residual:
        dx = dx + dout
    return dx, g


# -- LSTM -------------------------------------------------------------------

@dataclass
class LamState:
    """Per-point LSTM hidden and cell vectors."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, n: int, hidden: int) -> "LamState":
        return cls(np.zeros((n, hidden)), np.zeros((n, hidden)))

    def roll(self, k: int) -> "LamState":
        return LamState(np.roll(self.h, -k, axis=0), np.roll(self.c, -k, axis=0))


def lstm_step(x, state: LamState, params: dict, return_cache: bool = False):
    """One LSTM cell update applied independently to every point.

    ``params``: ``wx`` (C_in, 4H), ``wh`` (H, 4H), ``b`` (4H,), gate order
    input, forget, candidate, output.
    """
    x = np.asarray(x, dtype=np.float64)
    hid = state.h.shape[1]
    if params["wx"].shape != (x.shape[1], 4 * hid) or \
            params["wh"].shape != (hid, 4 * hid) or state.h.shape[0] != x.shape[0]:
        raise ShapeMismatch("LSTM input, state and weight shapes disagree")
    z = _dense(x, params["wx"]) + _dense(state.h, params["wh"]) + params["b"]
    i = _sigmoid(z[:, :hid])
    f = _sigmoid(z[:, hid:2 * hid])
    g = np.tanh(z[:, 2 * hid:3 * hid])
    o = _sigmoid(z[:, 3 * hid:])
    c = f * state.c + i * g
    tc = np.tanh(c)
    h = o * tc
    new = LamState(h, c)
    if return_cache:
        return h, new, (x, state, i, f, g, o, tc)
    return h, new


def _lstm_backward(params, cache, dh, dc_next):
    x, state, i, f, g, o, tc = cache
    do = dh * tc
    dc = dh * o * (1.0 - tc * tc) + dc_next
    di = dc * g
    df = dc * state.c
    dg = dc * i
    dc_prev = dc * f
    dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                         dg * (1 - g * g), do * o * (1 - o)], axis=1)
    grads = {"wx": x.T @ dz, "wh": state.h.T @ dz, "b": dz.sum(axis=0)}
    dx = dz @ params["wx"].T
    dh_prev = dz @ params["wh"].T
    return dx, dh_prev, dc_prev, grads


# -- feature sampling -------------------------------------------------------

def sample_point_features(level, ps) -> np.ndarray:
    """Bilinear read of a pyramid level at each point.

    ``level`` is ``(stride, plane)`` with ``plane`` of shape (h, w, C). Plane
    cell ``j`` averages pixels ``[s j, s j + s - 1]``, so its center sits at
    pixel coordinate ``s j + (s - 1) / 2``. Reads are clamped to the plane.
    """
    stride, plane = level
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim == 2:
        plane = plane[..., None]
    pts = ps.points if isinstance(ps, PointSet) else np.asarray(ps, float)
    off = (stride - 1) / 2.0
    u = (pts[:, 0] - off) / stride
    v = (pts[:, 1] - off) / stride
    return bilinear_sample(plane, u, v, mode="clamp")


# -- parameters -------------------------------------------------------------

@dataclass(frozen=True)
class LamConfig:
    in_channels: int = 10     # point feature channels, encoding excluded
    hidden: int = 64
    heads: int = 4
    blocks: int = 8
    kernel: int = 3
    head_hidden: int = 64

    @property
    def net_in(self) -> int:
        return self.in_channels + 2


def _param_shapes(cfg: LamConfig) -> Dict[str, tuple]:
    h, k = cfg.hidden, cfg.kernel
    shapes = {}
    for b in range(cfg.blocks):
        cin = cfg.net_in if b == 0 else h
        shapes[f"block{b}.conv1.w"] = (k, cin, h)
        shapes[f"block{b}.conv1.b"] = (h,)
        shapes[f"block{b}.conv2.w"] = (k, h, h)
        shapes[f"block{b}.conv2.b"] = (h,)
        for m in ("q", "k", "v", "o"):
            shapes[f"block{b}.mha.w{m}"] = (h, h)
            shapes[f"block{b}.mha.b{m}"] = (h,)
    shapes["fuse.w"] = (cfg.blocks * h, h)
    shapes["fuse.b"] = (h,)
    shapes["lstm.wx"] = (2 * h, 4 * h)
    shapes["lstm.wh"] = (h, 4 * h)
    shapes["lstm.b"] = (4 * h,)
    shapes["head.w1"] = (h, cfg.head_hidden)
    shapes["head.b1"] = (cfg.head_hidden,)
    shapes["head.w2"] = (cfg.head_hidden, 2)
    shapes["head.b2"] = (2,)
    return shapes


@dataclass
class LamParams:
    config: LamConfig
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = _param_shapes(self.config)
        if set(shapes) != set(self.tensors):
            missing = sorted(set(shapes) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(shapes))
            raise ShapeMismatch(f"parameter names differ: missing {missing}, "
                                f"unexpected {extra}")
        for name, shape in shapes.items():
            arr = np.asarray(self.tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeMismatch(f"{name}: shape {arr.shape}, expected {shape}")
            self.tensors[name] = arr

    @classmethod
    def zeros(cls, config: LamConfig) -> "LamParams":
        return cls(config, {k: np.zeros(s)
                            for k, s in _param_shapes(config).items()})

    @classmethod
    def init(cls, config: LamConfig, rng: np.random.Generator,
             gain: float = 1.0) -> "LamParams":
        """Glorot-uniform weights scaled by ``gain``, zero biases.

        The forget-gate bias starts at 1 and the last head layer is scaled
        down by 0.1 so fresh networks emit small offsets.
        """
        tensors = {}
        for name, shape in _param_shapes(config).items():
            if name.rsplit(".", 1)[-1].startswith("b"):
                tensors[name] = np.zeros(shape)
                continue
            fan_in = int(np.prod(shape[:-1]))
            fan_out = shape[-1] * (shape[0] if len(shape) == 3 else 1)
            lim = gain * np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-lim, lim, size=shape)
        h = config.hidden
        tensors["lstm.b"][h:2 * h] = 1.0
        tensors["head.w2"] *= 0.1
        return cls(config, tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "LamParams":
        return LamParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def names(self):
        return list(_param_shapes(self.config))


# -- assembled network ------------------------------------------------------

def _block_params(params: LamParams, b: int):
    t = params.tensors
    mha = {m: t[f"block{b}.mha.{m}"] for m in
           ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")}
    return (t[f"block{b}.conv1.w"], t[f"block{b}.conv1.b"],
            t[f"block{b}.conv2.w"], t[f"block{b}.conv2.b"], mha)


def lam_forward(feats, ps, state: LamState, params: LamParams,
                use_encoding: bool = True, return_cache: bool = False):
    """Per-point offsets ``(N, 2)`` and the updated recurrent state."""
    cfg = params.config
    feats = np.asarray(feats, dtype=np.float64)
    n = len(ps) if ps is not None else feats.shape[0]
    if feats.shape != (n, cfg.in_channels):
        raise ShapeMismatch(f"features {feats.shape}, expected "
                            f"({n}, {cfg.in_channels})")
    if state.h.shape != (n, cfg.hidden):
        raise ShapeMismatch(f"state {state.h.shape}, expected ({n}, {cfg.hidden})")
    if use_encoding:
        pe = cyclic_positional_encoding(np.arange(n), n)
    else:
        pe = np.zeros((n, 2))
    x = np.concatenate([feats, pe], axis=1)

    caches = []
    outs = []
    for b in range(cfg.blocks):
        w1, b1, w2, b2, mha = _block_params(params, b)
        z1 = circular_conv(x, w1, b1)
        r1 = np.maximum(z1, 0.0)
        skip1 = x.shape[1] == cfg.hidden
        h1 = r1 + x if skip1 else r1
        z2 = circular_conv(h1, w2, b2)
        h2 = np.maximum(z2, 0.0) + h1
        y, mcache = multi_head_attention(h2, cfg.heads, mha, residual=True,
                                         return_cache=True)
        caches.append((x, z1, skip1, h1, z2, h2, mcache))
        outs.append(y)
        x = y

    cat = np.concatenate(outs, axis=1)
    fused = _dense(cat, params["fuse.w"]) + params["fuse.b"]
    arg = np.argmax(fused, axis=0)  # first maximum on ties
    glob = fused[arg, np.arange(fused.shape[1])]
    lstm_in = np.concatenate([fused, np.broadcast_to(glob, fused.shape)], axis=1)
    lstm_p = {"wx": params["lstm.wx"], "wh": params["lstm.wh"],
              "b": params["lstm.b"]}
    h, new_state, lcache = lstm_step(lstm_in, state, lstm_p, return_cache=True)
    zh = _dense(h, params["head.w1"]) + params["head.b1"]
    rh = np.maximum(zh, 0.0)
    offsets = _dense(rh, params["head.w2"]) + params["head.b2"]
    if return_cache:
        cache = (caches, cat, fused, arg, lcache, h, zh, rh)
        return offsets, new_state, cache
    return offsets, new_state


def lam_backward(params: LamParams, cache, d_offsets, d_state: LamState = None):
    """Backpropagate ``d_offsets`` (and optional ``d_state`` on the returned
    state) through one :func:`lam_forward` call.

    Returns ``(grads, d_feats, d_state_in)`` with ``grads`` keyed like
    ``params.tensors``.
    """
    cfg = params.config
    caches, cat, fused, arg, lcache, h, zh, rh = cache
    g = {}
    d_off = np.asarray(d_offsets, dtype=np.float64)
    g["head.w2"] = rh.T @ d_off
    g["head.b2"] = d_off.sum(axis=0)
    drh = d_off @ params["head.w2"].T
    dzh = drh * (zh > 0)
    g["head.w1"] = h.T @ dzh
    g["head.b1"] = dzh.sum(axis=0)
    dh = dzh @ params["head.w1"].T
    dc_next = np.zeros_like(h)
    if d_state is not None:
        dh = dh + d_state.h
        dc_next = d_state.c
    lstm_p = {"wx": params["lstm.wx"], "wh": params["lstm.wh"],
              "b": params["lstm.b"]}
    dlin, dh_prev, dc_prev, lg = _lstm_backward(lstm_p, lcache, dh, dc_next)
    g["lstm.wx"], g["lstm.wh"], g["lstm.b"] = lg["wx"], lg["wh"], lg["b"]

    c_h = cfg.hidden
    dfused = dlin[:, :c_h].copy()
    dglob = dlin[:, c_h:].sum(axis=0)
    dfused[arg, np.arange(c_h)] += dglob
    g["fuse.w"] = cat.T @ dfused
    g["fuse.b"] = dfused.sum(axis=0)
    dcat = dfused @ params["fuse.w"].T

    dx = np.zeros((cat.shape[0], c_h))
    for b in reversed(range(cfg.blocks)):
        x, z1, skip1, h1, z2, h2, mcache = caches[b]
        w1, b1, w2, b2, mha = _block_params(params, b)
        dy = dx + dcat[:, b * c_h:(b + 1) * c_h]
        dh2, mg = _mha_backward(mha, mcache, dy, residual=True)
        for key, val in mg.items():
            g[f"block{b}.mha.{key}"] = val
        dz2 = dh2 * (z2 > 0)
        dh1_conv, g[f"block{b}.conv2.w"], g[f"block{b}.conv2.b"] = \
            _circular_conv_backward(h1, w2, dz2)
        dh1 = dh1_conv + dh2
        dz1 = dh1 * (z1 > 0)
        dx_conv, g[f"block{b}.conv1.w"], g[f"block{b}.conv1.b"] = \
            _circular_conv_backward(x, w1, dz1)
        dx = dx_conv + (dh1 if skip1 else 0.0)
    d_feats = dx[:, :cfg.in_channels]
    return g, d_feats, LamState(dh_prev, dc_prev)


# -- checkpoint files -------------------------------------------------------

_MAGIC = b"LAMCKPT1"


def save_checkpoint(params: LamParams, path) -> None:
    """Write ``MAGIC | uint64 header length | JSON header | float32 LE data``.

    The header records the configuration and, per tensor, its name, shape and
    element offset into the payload.
    """
    from .io import atomic_write_bytes

    atomic_write_bytes(path, checkpoint_bytes(params))


def checkpoint_bytes(params: LamParams) -> bytes:
    cfg = params.config
    entries = []
    offset = 0
    chunks = []
    for name in params.names():
        arr = params.tensors[name]
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header = json.dumps({"config": cfg.__dict__, "tensors": entries,
                         "dtype": "float32-le"}, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<Q", len(header)))
    buf.write(header)
    for c in chunks:
        buf.write(c)
    return buf.getvalue()


def load_checkpoint(path) -> LamParams:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def checkpoint_from_bytes(data: bytes) -> LamParams:
    if data[:8] != _MAGIC:
        raise ParseError("not a LAM checkpoint (bad magic)")
    if len(data) < 16:
        raise ParseError("truncated checkpoint header")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad checkpoint header: {exc}") from None
    payload = np.frombuffer(data[16 + hlen:], dtype="<f4")
    cfg = LamConfig(**header["config"])
    tensors = {}
    for ent in header["tensors"]:
        size = int(np.prod(ent["shape"])) if ent["shape"] else 1
        chunk = payload[ent["offset"]:ent["offset"] + size]
        if chunk.size != size:
            raise ParseError(f"payload too short for tensor {ent['name']}")
        tensors[ent["name"]] = chunk.astype(np.float64).reshape(ent["shape"])
    total = sum(int(np.prod(e["shape"])) for e in header["tensors"])
    if payload.size != total:
        raise ParseError(f"payload has {payload.size} floats, header says {total}")
    return LamParams(cfg, tensors)
