"""Propagation pipeline: global affine alignment, then coarse-to-fine local
refinement of every point.

Global alignment minimises the masked pixel matching loss directly over the
six affine parameters. Local refinement runs one update per pyramid level
with either the local alignment network (``backend='lam'``) or a descent
step on an edge-attraction energy with shape regularisers
(``backend='energy'``).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BadInit,
    EmptyFrames,
    EmptyMask,
    ShapeMismatch,
    SizeMismatch,
    TooFewFrames,
)
from .geometry import (
    AffineTransform,
    PointSet,
    apply_affine,
    as_image,
    bilinear_sample,
    crop_image,
    crop_window,
    rasterize_mask,
    resample_uniform,
    warp_image,
)
from .lam import LamParams, LamState, lam_forward, sample_point_features
from .losses import (
    cycle_consistency_loss,
    pixel_matching_loss,
    reg_first_derivative,
    reg_second_derivative,
)
from .metrics import TrackAnnotation

logger = logging.getLogger(__name__)

__all__ = [
    "TrackerConfig",
    "TrackState",
    "FeaturePyramid",
    "alignment_loss",
    "estimate_global_affine",
    "build_pyramid",
    "local_refine",
    "track_sequence",
    "run_cycle",
    "cycle_loss",
]


@dataclass
class TrackerConfig:
    n_points: int = 128
    local_iters: int = 5
    pyramid_strides: Tuple[int, ...] = (32, 16, 8, 4, 4)
    backend: str = "energy"
    global_levels: int = 3
    global_steps: int = 100
    global_downscale: int = 2
    w_edge: float = 0.5
    w_r1: float = 0.01
    w_r2: float = 0.01
    crop_scale: float = 2.0

    def __post_init__(self):
        self.pyramid_strides = tuple(int(s) for s in self.pyramid_strides)
        if self.local_iters != len(self.pyramid_strides):
            raise ValueError("local_iters must equal the number of strides")
        if self.backend not in ("lam", "energy"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if min(self.w_edge, self.w_r1, self.w_r2) < 0:
            raise ValueError("energy weights must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrackerConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pyramid_strides"] = list(self.pyramid_strides)
        return d


@dataclass
class FeaturePyramid:
    """``levels[i] = (stride, plane)``; plane shape ``(ceil(H/s), ceil(W/s), C)``."""

    levels: List[Tuple[int, np.ndarray]]
    size: Tuple[int, int]  # (W, H) of the full-resolution input

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]


@dataclass
class TrackState:
    points: PointSet
    reference: Optional[PointSet] = None
    lam: Optional[LamState] = None
    prev_frame: Optional[np.ndarray] = None
    diagnostics: List[dict] = field(default_factory=list)


# -- pooling helpers --------------------------------------------------------

def _avg_pool(img: np.ndarray, s: int) -> np.ndarray:
    """Block mean over ``s x s`` cells; partial border cells average what they
    cover."""
    if s == 1:
        return img.copy()
    h, w = img.shape[:2]
    hh, ww = -(-h // s), -(-w // s)
    pad = [(0, hh * s - h), (0, ww * s - w)] + [(0, 0)] * (img.ndim - 2)
    padded = np.pad(img, pad)
    ones = np.pad(np.ones((h, w)), pad[:2])
    shape = (hh, s, ww, s) + img.shape[2:]
    sums = padded.reshape(shape).sum(axis=(1, 3))
    counts = ones.reshape(hh, s, ww, s).sum(axis=(1, 3))
    if img.ndim == 3:
        counts = counts[..., None]
    return sums / counts


def _gray(img: np.ndarray) -> np.ndarray:
    return img if img.ndim == 2 else img.mean(axis=2)


# -- global alignment -------------------------------------------------------

def alignment_loss(cur, prev, prev_mask, a: AffineTransform) -> float:
    """Masked pixel matching loss after warping ``prev`` and its mask by ``a``."""
    wp = warp_image(prev, a)
    wm = warp_image(prev_mask, a) > 0.5
    return pixel_matching_loss(cur, wp, wm).value


class _Level:
    """One resolution level of the global alignment problem.

    Pixel ``j`` of a level pooled by factor ``f`` is centred at full
    coordinate ``f j + (f - 1) / 2``.
    """

    def __init__(self, cur, prev, mask, f):
        self.f = f
        self.cur = _avg_pool(cur, f)
        self.prev = _avg_pool(prev, f)
        self.mask = _avg_pool(mask, f)
        h, w = self.cur.shape[:2]
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        off = (f - 1) / 2.0
        self.xf = (f * xx + off).ravel()
        self.yf = (f * yy + off).ravel()
        self.cur_flat = self.cur.reshape(h * w, -1)

    def to_level(self, x):
        return (x - (self.f - 1) / 2.0) / self.f

    def evaluate(self, inv: AffineTransform, jac=False):
        """Residuals of ``cur(x) - prev(inv x)`` over the warped mask."""
        src = inv.apply(np.stack([self.xf, self.yf], axis=-1))
        u, v = self.to_level(src[:, 0]), self.to_level(src[:, 1])
        m = bilinear_sample(self.mask, u, v)
        sel = m > 0.5
        if not sel.any():
            return None
        if jac:
            val, (gx, gy) = bilinear_sample(self.prev, u[sel], v[sel],
                                            return_grad=True)
        else:
            val = bilinear_sample(self.prev, u[sel], v[sel])
        val = val.reshape(sel.sum(), -1)
        r = self.cur_flat[sel] - val
        if not jac:
            return r, sel
        gx = gx.reshape(sel.sum(), -1) / self.f
        gy = gy.reshape(sel.sum(), -1) / self.f
        return r, sel, gx, gy


def _inverse_map(p, c, s) -> AffineTransform:
    """``x -> x + s * (M (x - c) / s + t)`` with ``p = (M11, M12, M21, M22, t1, t2)``."""
    m = np.array([[p[0], p[1]], [p[2], p[3]]])
    t = -m @ c + s * np.array([p[4], p[5]])
    return AffineTransform(1 + p[0], p[1], p[2], 1 + p[3], t[0], t[1])


def _level_objective(level, p, c, s):
    out = level.evaluate(_inverse_map(p, c, s))
    if out is None:
        return np.inf
    r, _ = out
    return float(np.sqrt(np.sum(r * r, axis=1)).mean())


def _solve_level(level, p, c, s, steps, eps=0.01):
    """Levenberg-Marquardt on the IRLS-reweighted masked L2 residual."""
    lam = 1e-3
    best = _level_objective(level, p, c, s)
    evals = 0
    while evals < steps:
        out = level.evaluate(_inverse_map(p, c, s), jac=True)
        if out is None:
            break
        r, sel, gx, gy = out
        x = level.xf[sel]
        y = level.yf[sel]
        u = (x - c[0]) / s
        v = (y - c[1]) / s
        # d(inv x)/dp: x-row uses (M11, M12, t1), y-row uses (M21, M22, t2)
        dxp = np.stack([s * u, s * v, np.zeros_like(u), np.zeros_like(u),
                        np.full_like(u, s), np.zeros_like(u)], axis=1)
        dyp = np.stack([np.zeros_like(u), np.zeros_like(u), s * u, s * v,
                        np.zeros_like(u), np.full_like(u, s)], axis=1)
        # residual = cur - prev(inv x): dr/dp = -(gx dxp + gy dyp), per channel
        jac = -(gx[:, :, None] * dxp[:, None, :] + gy[:, :, None] * dyp[:, None, :])
        wts = 1.0 / np.maximum(np.sqrt(np.sum(r * r, axis=1)), eps)
        jw = jac * wts[:, None, None]
        hess = np.einsum("nci,ncj->ij", jw, jac)
        grad = np.einsum("nci,nc->i", jw, r)
        improved = False
        while evals < steps:
            evals += 1
            delta = np.linalg.solve(hess + lam * np.diag(np.diag(hess) + 1e-9),
                                    -grad)
            cand = p + delta
            val = _level_objective(level, cand, c, s)
            if val < best:
                p, best = cand, val
                lam = max(lam / 3.0, 1e-7)
                improved = True
                break
            lam *= 4.0
            if lam > 1e8:
                break
        if not improved or np.max(np.abs(delta)) < 1e-6:
            break
    return p, best


def estimate_global_affine(cur, prev, prev_mask, cfg: TrackerConfig = None
                           ) -> AffineTransform:
    """Affine map ``A`` (prev -> cur) minimising the masked pixel matching loss.

    The inputs are shrunk by ``cfg.global_downscale`` and solved coarse to
    fine over ``cfg.global_levels`` levels starting from the identity. The
    result is never worse than the identity under :func:`alignment_loss`.
    """
    cfg = cfg or TrackerConfig()
    cur = as_image(cur)
    prev = as_image(prev)
    mask = np.asarray(prev_mask, dtype=np.float64)
    if mask.ndim == 3:
        mask = mask[..., 0]
    if cur.shape != prev.shape or cur.shape[:2] != mask.shape:
        raise SizeMismatch(f"shapes differ: {cur.shape}, {prev.shape}, {mask.shape}")
    if not (mask > 0.5).any():
        raise EmptyMask("previous mask is empty")

    ys, xs = np.nonzero(mask > 0.5)
    c = np.array([xs.mean(), ys.mean()])
    s = max(float(np.sqrt(len(xs))), 1.0)
    p = np.zeros(6)
    base = max(int(cfg.global_downscale), 1)
    for lvl in reversed(range(cfg.global_levels)):
        f = base * 2 ** lvl
        if min(cur.shape[:2]) / f < 4:
            continue
        level = _Level(cur, prev, mask, f)
        p, _ = _solve_level(level, p, c, s, cfg.global_steps)

    a = _inverse_map(p, c, s)
    if abs(a.det) < 1e-12:
        return AffineTransform.identity()
    a = a.inverse()
    ident = AffineTransform.identity()
    try:
        if alignment_loss(cur, prev, mask, a) > alignment_loss(cur, prev, mask, ident):
            return ident
    except EmptyMask:
        return ident
    return a


# -- local refinement -------------------------------------------------------

def build_pyramid(cur, warped_prev, warped_mask, cfg: TrackerConfig = None
                  ) -> FeaturePyramid:
    """Stride-pooled feature stacks.

    Channels are ``[cur, warped_prev, mask, gx, gy, mx, my, gx*dt, gy*dt,
    |grad cur|]`` where ``g``/``m`` are image/mask derivatives and ``dt`` is
    ``cur - warped_prev`` (image channels repeat for colour input; derived
    channels use the gray mean). Signed derivatives give a learned backend
    the orientation it needs to emit offsets in image axes, and the pooled
    ``g*dt`` products are the right-hand side of the optical-flow normal
    equations. The last channel drives the energy backend.
    """
    cfg = cfg or TrackerConfig()
    cur = as_image(cur)
    wp = as_image(warped_prev)
    wm = np.asarray(warped_mask, dtype=np.float64)
    if wm.ndim == 3:
        wm = wm[..., 0]
    if cur.shape != wp.shape or cur.shape[:2] != wm.shape:
        raise SizeMismatch(f"shapes differ: {cur.shape}, {wp.shape}, {wm.shape}")
    chans = lambda im: im[..., None] if im.ndim == 2 else im  # noqa: E731
    gray = _gray(cur)
    gy, gx = np.gradient(gray)
    my, mx = np.gradient(wm)
    dt = gray - _gray(wp)
    stack = np.concatenate([chans(cur), chans(wp)]
                           + [c[..., None] for c in (wm, gx, gy, mx, my,
                                                      gx * dt, gy * dt,
                                                      np.hypot(gx, gy))],
                           axis=2)
    cache = {}
    levels = []
    for s in cfg.pyramid_strides:
        if s not in cache:
            cache[s] = _avg_pool(stack, s)
        levels.append((s, cache[s]))
    h, w = cur.shape[:2]
    return FeaturePyramid(levels, (w, h))


def _energy_step(ps: np.ndarray, ref: np.ndarray, level, cfg: TrackerConfig):
    stride, plane = level
    edge = plane[..., -1]
    peak = edge.max()
    grad = np.zeros_like(ps)
    if cfg.w_edge > 0 and peak > 0:
        off = (stride - 1) / 2.0
        u = (ps[:, 0] - off) / stride
        v = (ps[:, 1] - off) / stride
        hh, ww = edge.shape
        _, (gu, gv) = bilinear_sample(edge / peak, np.clip(u, 0, ww - 1),
                                      np.clip(v, 0, hh - 1), return_grad=True)
        grad[:, 0] -= cfg.w_edge * gu / stride
        grad[:, 1] -= cfg.w_edge * gv / stride
    if cfg.w_r1 > 0:
        grad += cfg.w_r1 * reg_first_derivative(ref, ps).grad
    if cfg.w_r2 > 0:
        grad += cfg.w_r2 * reg_second_derivative(ref, ps).grad
    return ps - 0.5 * stride * grad


def local_refine(ps: PointSet, pyr: FeaturePyramid, state: TrackState,
                 cfg: TrackerConfig = None, params: Optional[LamParams] = None
                 ) -> PointSet:
    """One update per configured pyramid level, coarse to fine.

    The energy backend regularises against ``state.reference`` (defaults to
    the input points); the network backend reads and updates ``state.lam``.
    """
    cfg = cfg or TrackerConfig()
    if len(ps) != cfg.n_points:
        raise ShapeMismatch(f"point set has {len(ps)} points, config expects "
                            f"{cfg.n_points}")
    if len(pyr) < cfg.local_iters:
        raise ShapeMismatch("pyramid has fewer levels than local_iters")
    w, h = pyr.size
    pts = ps.points.copy()
    ref = (state.reference.points if state.reference is not None
           else ps.points)
    diag = []
    for it in range(cfg.local_iters):
        level = pyr[it]
        before = pts.copy()
        if cfg.backend == "lam":
            if params is None:
                raise ValueError("the lam backend needs parameters")
            if state.lam is None:
                state.lam = LamState.zeros(len(pts), params.config.hidden)
            feats = sample_point_features(level, pts)
            offsets, state.lam = lam_forward(feats, ps, state.lam, params)
            pts = pts + offsets
        else:
            pts = _energy_step(pts, ref, level, cfg)
        pts[:, 0] = np.clip(pts[:, 0], 0.0, w - 1)
        pts[:, 1] = np.clip(pts[:, 1], 0.0, h - 1)
        diag.append(float(np.linalg.norm(pts - before, axis=1).mean()))
    state.diagnostics.append({"offset_magnitude": diag})
    return ps.with_points(pts)


# -- sequences --------------------------------------------------------------

def _prepare_init(init: PointSet, cfg: TrackerConfig) -> PointSet:
    if not isinstance(init, PointSet):
        try:
            init = PointSet(init)
        except ValueError as exc:
            raise BadInit(str(exc)) from None
    if len(init) < 3:
        raise BadInit(f"initial set has {len(init)} points, need >= 3")
    if len(init) != cfg.n_points:
        try:
            init = resample_uniform(init, cfg.n_points)
        except Exception as exc:  # degenerate contour
            raise BadInit(str(exc)) from None
    return init


def track_sequence(frames: Sequence, init: PointSet, cfg: TrackerConfig = None,
                   params: Optional[LamParams] = None,
                   log: Optional[list] = None) -> TrackAnnotation:
    """Propagate ``init`` through ``frames``; returns full-image coordinates.

    If ``log`` is a list, one diagnostics dict per processed frame is
    appended to it.
    """
    cfg = cfg or TrackerConfig()
    if len(frames) == 0:
        raise EmptyFrames("no frames to track")
    frames = [as_image(f) for f in frames]
    h, w = frames[0].shape[:2]
    init = _prepare_init(init, cfg)
    state = TrackState(points=init, prev_frame=frames[0])
    out = [init]
    for t in range(1, len(frames)):
        cur = frames[t]
        prev_pts = state.points
        window = crop_window(prev_pts, cfg.crop_scale)
        prev_c, origin = crop_image(state.prev_frame, window)
        cur_c, _ = crop_image(cur, window)
        o = np.array(origin, dtype=np.float64)
        local = prev_pts.points - o
        side = prev_c.shape[1]
        prev_mask = rasterize_mask(local, side, prev_c.shape[0])
        if prev_mask.any():
            a = estimate_global_affine(cur_c, prev_c, prev_mask, cfg)
        else:
            a = AffineTransform.identity()
        warped = a.apply(local)
        warped_prev = warp_image(prev_c, a)
        warped_mask = rasterize_mask(warped, side, prev_c.shape[0])
        pyr = build_pyramid(cur_c, warped_prev, warped_mask, cfg)
        state.reference = PointSet(warped)
        refined = local_refine(PointSet(warped, prev_pts.visible), pyr, state,
                               cfg, params)
        pts = refined.points + o
        pts[:, 0] = np.clip(pts[:, 0], 0.0, w - 1)
        pts[:, 1] = np.clip(pts[:, 1], 0.0, h - 1)
        state.points = PointSet(pts, prev_pts.visible)
        state.prev_frame = cur
        entry = {"frame": t, "global_affine": a.shifted(*o).params.tolist(),
                 "offset_magnitude": state.diagnostics[-1]["offset_magnitude"]}
        if log is not None:
            log.append(entry)
        logger.debug("frame %d: %s", t, entry)
        out.append(state.points)
    return TrackAnnotation(w, h, out)


def run_cycle(frames: Sequence, init: PointSet, k: int,
              cfg: TrackerConfig = None, params: Optional[LamParams] = None):
    """Track ``frames[0..k]`` forward, then back to frame 0.

    ``backward.frames[j]`` is the estimate on frame ``k - j``, so
    ``forward[t]`` pairs with ``backward[k - t]``.
    """
    cfg = cfg or TrackerConfig()
    if k < 0 or len(frames) < k + 1:
        raise TooFewFrames(f"need {k + 1} frames, got {len(frames)}")
    clip = list(frames[:k + 1])
    fwd = track_sequence(clip, init, cfg, params)
    bwd = track_sequence(clip[::-1], fwd.frames[-1], cfg, params)
    return fwd, bwd


def cycle_loss(forward: TrackAnnotation, backward: TrackAnnotation):
    """Cycle-consistency loss of a :func:`run_cycle` result."""
    return cycle_consistency_loss(forward.frames, backward.frames[::-1])
