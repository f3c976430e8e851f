"""Synthetic sequences with exact point correspondences.

An object cut-out is deformed once with affine moving-least-squares, then
animated with a random walk of small affine motions over a background that
follows its own random walk. Ground-truth tracks are obtained by pushing the
resampled contour through the same maps, so correspondence is exact.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import CanvasTooSmall, EmptyMask, NoControls
from .geometry import (
    AffineTransform,
    PointSet,
    apply_affine,
    as_image,
    bilinear_sample,
    extract_contour,
    rasterize_mask,
    resample_uniform,
    warp_image,
)
from .metrics import TrackAnnotation

__all__ = [
    "SynthConfig",
    "SyntheticSequence",
    "mls_affine_deform",
    "mls_affine_deform_points",
    "procedural_texture",
    "procedural_object",
    "feather_alpha",
    "generate_sequence",
    "generate_default_sequence",
]


@dataclass
class SynthConfig:
    seed: int = 0
    frames: int = 8
    points: int = 64
    canvas: Tuple[int, int] = (128, 128)  # (W, H)
    objects: int = 1
    mls_controls: int = 6
    mls_max_shift: float = 0.0
    object_rotation: float = 3.0       # degrees, per frame, uniform +-
    object_scale: float = 0.03         # relative, per frame, uniform +-
    object_translation: float = 2.0    # pixels, per frame, uniform +-
    background_rotation: float = 1.0
    background_scale: float = 0.01
    background_translation: float = 2.0
    channels: int = 1                  # for the procedural default sources

    def __post_init__(self):
        self.canvas = tuple(int(v) for v in self.canvas)
        if self.frames < 2:
            raise ValueError("frames must be >= 2")
        if self.points < 3:
            raise ValueError("points must be >= 3")
        if self.objects not in (1, 2):
            raise ValueError("objects must be 1 or 2")
        ranges = (self.mls_max_shift, self.object_rotation, self.object_scale,
                  self.object_translation, self.background_rotation,
                  self.background_scale, self.background_translation)
        if any(r < 0 for r in ranges):
            raise ValueError("jitter ranges must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["canvas"] = list(self.canvas)
        return d


@dataclass
class SyntheticSequence:
    frames: List[np.ndarray]
    gt: TrackAnnotation
    # transforms[t][o]: frame-0 canvas -> frame-t canvas for object o
    transforms: List[List[AffineTransform]]
    background_transforms: List[AffineTransform] = field(default_factory=list)
    masks: List[np.ndarray] = field(default_factory=list)


# -- moving least squares ---------------------------------------------------

def mls_affine_deform_points(v, controls_src, controls_dst, alpha: float = 1.0):
    """Affine moving-least-squares map evaluated at every row of ``v``."""
    p = np.asarray(controls_src, dtype=np.float64).reshape(-1, 2)
    q = np.asarray(controls_dst, dtype=np.float64).reshape(-1, 2)
    if len(p) == 0:
        raise NoControls("need at least one control point")
    if p.shape != q.shape:
        raise ValueError("source and destination controls differ in count")
    v = np.asarray(v, dtype=np.float64).reshape(-1, 2)

    d2 = np.sum((p[None, :, :] - v[:, None, :]) ** 2, axis=-1)  # (V, P)
    hit = d2 == 0.0
    out = np.empty_like(v)
    rows = hit.any(axis=1)
    # a point on a control maps to that control's target
    out[rows] = q[np.argmax(hit[rows], axis=1)]
    free = ~rows
    if not free.any():
        return out
    vf = v[free]
    w = 1.0 / d2[free] ** alpha
    wsum = w.sum(axis=1, keepdims=True)
    p_star = (w @ p) / wsum
    q_star = (w @ q) / wsum

    centered = p - p.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    degenerate = len(p) < 3 or sv[-1] <= 1e-9 * max(sv[0], 1e-300)

    if degenerate:
        out[free] = vf + (w @ (q - p)) / wsum
    else:
        ph = p[None, :, :] - p_star[:, None, :]               # (V, P, 2)
        qh = q[None, :, :] - q_star[:, None, :]
        a = np.einsum("vp,vpi,vpj->vij", w, ph, ph)
        b = np.einsum("vp,vpi,vpj->vij", w, ph, qh)
        m = np.linalg.solve(a, b)
        out[free] = np.einsum("vi,vij->vj", vf - p_star, m) + q_star
    return out


def mls_affine_deform(v, controls_src, controls_dst, alpha: float = 1.0):
    """Single-point version of :func:`mls_affine_deform_points`."""
    return mls_affine_deform_points(np.asarray(v, float)[None], controls_src,
                                    controls_dst, alpha)[0]


# -- procedural sources -----------------------------------------------------

def procedural_texture(rng: np.random.Generator, h: int, w: int,
                       channels: int = 1, smooth: float = 2.0) -> np.ndarray:
    """Seeded smooth noise over a random linear gradient, in ``[0, 1]``."""
    out = np.empty((h, w, channels))
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    for c in range(channels):
        noise = ndimage.gaussian_filter(rng.standard_normal((h, w)), smooth,
                                        mode="wrap")
        noise /= noise.std() + 1e-12
        gx, gy = rng.uniform(-1, 1, size=2)
        ramp = gx * xx + gy * yy
        field_ = 0.6 * noise + ramp
        lo, hi = field_.min(), field_.max()
        out[..., c] = (field_ - lo) / (hi - lo + 1e-12)
    return out[..., 0] if channels == 1 else out


def procedural_object(rng: np.random.Generator, size: int = 64,
                      channels: int = 1, n_lobes: int = 5):
    """Random star-shaped blob: returns ``(mask, image)`` of ``size x size``.

    The blob interior is a bright texture so it separates from typical
    backgrounds.
    """
    c = (size - 1) / 2.0
    base = 0.32 * size
    angles = np.linspace(0, 2 * np.pi, 96, endpoint=False)
    radius = np.full_like(angles, base)
    for k in range(2, 2 + n_lobes):
        radius += rng.uniform(-0.06, 0.06) * size * np.cos(
            k * angles + rng.uniform(0, 2 * np.pi))
    poly = np.stack([c + radius * np.cos(angles), c + radius * np.sin(angles)],
                    axis=1)
    mask = rasterize_mask(poly, size, size)
    tex = procedural_texture(rng, size, size, channels, smooth=1.5)
    image = 0.35 + 0.65 * tex
    return mask, image


def feather_alpha(mask, ramp: float = 3.0) -> np.ndarray:
    """Linear alpha ramp of width ``ramp`` pixels centred on the mask edge."""
    m = np.asarray(mask) > 0.5
    if m.ndim == 3:
        m = m[..., 0]
    inside = ndimage.distance_transform_edt(m)
    outside = ndimage.distance_transform_edt(~m)
    signed = np.where(m, inside - 0.5, -(outside - 0.5))
    return np.clip(0.5 + signed / ramp, 0.0, 1.0)


# -- sequence generation ----------------------------------------------------

def _random_step(rng, rot, scale, trans, center) -> AffineTransform:
    angle = rng.uniform(-rot, rot) if rot > 0 else 0.0
    s = 1.0 + (rng.uniform(-scale, scale) if scale > 0 else 0.0)
    if trans > 0:
        tx, ty = rng.uniform(-trans, trans, size=2)
    else:
        tx = ty = 0.0
    return AffineTransform.similarity(angle, s, tx, ty, center=center)


def _match_channels(img, channels):
    img = as_image(img)
    if channels == 1:
        return img if img.ndim == 2 else img.mean(axis=2)
    if img.ndim == 2:
        return np.repeat(img[..., None], channels, axis=2)
    return img


def _paste(canvas, layer, alpha):
    if canvas.ndim == 3:
        alpha = alpha[..., None]
    return alpha * layer + (1.0 - alpha) * canvas


def _warp_into(img, a: AffineTransform, w: int, h: int):
    """Inverse-map ``img`` through ``a`` onto a ``w x h`` raster."""
    inv = a.inverse()
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    src = inv.apply(np.stack([xx, yy], axis=-1))
    return bilinear_sample(img, src[..., 0], src[..., 1], mode="zero")


def generate_sequence(cfg: SynthConfig, object_mask, object_image, background,
                      rng: Optional[np.random.Generator] = None
                      ) -> SyntheticSequence:
    """Animate ``object_image`` (cut out by ``object_mask``) over ``background``.

    All randomness is drawn from ``rng`` (default: seeded from ``cfg.seed``).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    w, h = cfg.canvas
    bg = as_image(background)
    if bg.shape[0] < h or bg.shape[1] < w:
        raise CanvasTooSmall(
            f"background {bg.shape[1]}x{bg.shape[0]} smaller than canvas {w}x{h}")
    obj_mask = np.asarray(object_mask, dtype=np.float64)
    if obj_mask.ndim == 3:
        obj_mask = obj_mask[..., 0]
    obj_img = as_image(object_image)
    if obj_img.shape[:2] != obj_mask.shape:
        raise ValueError("object image and mask sizes differ")
    if not (obj_mask > 0.5).any():
        raise EmptyMask("object mask is empty")
    channels = 1 if bg.ndim == 2 else bg.shape[2]
    obj_img = _match_channels(obj_img, channels)

    # contour -> N points, then one MLS deformation for the whole sequence
    contour = extract_contour(obj_mask)
    base = resample_uniform(contour, cfg.points).points
    oh, ow = obj_mask.shape
    if cfg.mls_max_shift > 0 and cfg.mls_controls > 0:
        fr, fc = np.nonzero(obj_mask > 0.5)
        pick = rng.choice(len(fr), size=min(cfg.mls_controls, len(fr)),
                          replace=False)
        src = np.stack([fc[pick], fr[pick]], axis=1).astype(np.float64)
        dst = src + rng.uniform(-cfg.mls_max_shift, cfg.mls_max_shift,
                                size=src.shape)
        base = mls_affine_deform_points(base, src, dst)
        yy, xx = np.mgrid[0:oh, 0:ow].astype(np.float64)
        grid = np.stack([xx.ravel(), yy.ravel()], axis=1)
        back = mls_affine_deform_points(grid, dst, src).reshape(oh, ow, 2)
        obj_img = bilinear_sample(obj_img, back[..., 0], back[..., 1])
        obj_mask = bilinear_sample(obj_mask, back[..., 0], back[..., 1])
    alpha = feather_alpha(obj_mask)

    # initial placement: object bbox center -> canvas center
    lo, hi = base.min(axis=0), base.max(axis=0)
    ctr = (lo + hi) / 2.0
    canvas_ctr = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    place = [AffineTransform.translation(*(canvas_ctr - ctr))]
    if cfg.objects == 2:
        off = rng.uniform(-0.3, 0.3, size=2) * np.array([w, h])
        place.append(AffineTransform.similarity(
            0.0, 0.7, *(canvas_ctr + off - ctr), center=ctr))
    # background: canvas sits at the centre of the background raster
    bh, bw = bg.shape[:2]
    bg_place = AffineTransform.translation(-(bw - w) // 2, -(bh - h) // 2)

    obj_tf = list(place)
    bg_tf = bg_place
    frames, masks, gts, rel, bg_rel = [], [], [], [], []
    gt0 = None
    for t in range(cfg.frames):
        if t > 0:
            for o in range(cfg.objects):
                cur_ctr = obj_tf[o].apply(ctr)
                step = _random_step(rng, cfg.object_rotation, cfg.object_scale,
                                    cfg.object_translation, cur_ctr)
                obj_tf[o] = step.compose(obj_tf[o])
            step = _random_step(rng, cfg.background_rotation,
                                cfg.background_scale,
                                cfg.background_translation, canvas_ctr)
            bg_tf = step.compose(bg_tf)
        frame = _warp_into(bg, bg_tf, w, h)
        # distractor first so the tracked object is never covered
        for o in reversed(range(cfg.objects)):
            layer = _warp_into(obj_img, obj_tf[o], w, h)
            a = _warp_into(alpha, obj_tf[o], w, h)
            frame = _paste(frame, layer, a)
        frames.append(np.clip(frame, 0.0, 1.0))
        masks.append(_warp_into(obj_mask, obj_tf[0], w, h) > 0.5)
        if t == 0:
            gt0 = obj_tf[0].apply(base)
            rel.append([AffineTransform.identity()] * cfg.objects)
            first = [tf for tf in obj_tf]
        else:
            rel.append([obj_tf[o].compose(first[o].inverse())
                        for o in range(cfg.objects)])
        bg_rel.append(bg_tf.compose(bg_place.inverse()))
        pts = rel[-1][0].apply(gt0) if t > 0 else gt0
        inside = ((pts[:, 0] >= 0) & (pts[:, 0] <= w - 1)
                  & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1))
        gts.append(PointSet(pts, inside))

    return SyntheticSequence(frames, TrackAnnotation(w, h, gts), rel, bg_rel,
                             [m.astype(np.float64) for m in masks])


def generate_default_sequence(cfg: SynthConfig,
                              object_size: Optional[int] = None
                              ) -> SyntheticSequence:
    """Sequence built from seeded procedural object and background sources."""
    rng = np.random.default_rng(cfg.seed)
    w, h = cfg.canvas
    size = object_size or max(16, int(0.45 * min(w, h)))
    mask, image = procedural_object(rng, size, cfg.channels)
    background = 0.55 * procedural_texture(rng, h + 32, w + 32, cfg.channels,
                                           smooth=3.0)
    return generate_sequence(cfg, mask, image, background, rng=rng)
