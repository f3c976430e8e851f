"""Polygon and raster primitives.

Conventions used throughout the package:

* Images are numpy arrays of shape ``(H, W)`` or ``(H, W, C)`` with float
  samples in ``[0, 1]``.
* Pixel ``(row, col)`` has its center at the continuous coordinate
  ``(x, y) = (col, row)``; ``y`` grows downward.
* A point set is an ``(N, 2)`` array of ``(x, y)`` pairs plus an ``(N,)``
  visibility vector. Indices are cyclic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateBox,
    DegenerateComponent,
    DegenerateContour,
    EmptyMask,
    SingularTransform,
    TooFewPoints,
)

__all__ = [
    "PointSet",
    "AffineTransform",
    "CropWindow",
    "as_image",
    "bilinear_sample",
    "extract_contour",
    "resample_uniform",
    "apply_affine",
    "warp_image",
    "rasterize_mask",
    "crop_window",
    "crop_image",
    "signed_area",
]


@dataclass(frozen=True, eq=False)
class PointSet:
    """Ordered cyclic set of 2-D points with per-point visibility."""

    points: np.ndarray
    visible: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        if self.visible is None:
            vis = np.ones(len(pts), dtype=bool)
        else:
            vis = np.array(self.visible, dtype=bool).reshape(-1)
            if len(vis) != len(pts):
                raise ValueError("visible must have one flag per point")
        pts.setflags(write=False)
        vis.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "visible", vis)

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, PointSet):
            return NotImplemented
        return (self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.visible, other.visible))

    def __repr__(self):
        return f"PointSet(n={len(self)}, visible={int(self.visible.sum())})"

    def with_points(self, points) -> "PointSet":
        return PointSet(points, self.visible)

    def roll(self, k: int) -> "PointSet":
        """Cyclically relabel so that new index ``i`` is old index ``i + k``."""
        return PointSet(np.roll(self.points, -k, axis=0),
                        np.roll(self.visible, -k))


@dataclass(frozen=True)
class AffineTransform:
    """``(x, y) -> (a11 x + a12 y + tx, a21 x + a22 y + ty)``."""

    a11: float = 1.0
    a12: float = 0.0
    a21: float = 0.0
    a22: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "AffineTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]),
                   float(m[1, 1]), float(m[0, 2]), float(m[1, 2]))

    @classmethod
    def from_params(cls, p) -> "AffineTransform":
        """Build from ``[a11, a12, a21, a22, tx, ty]``."""
        return cls(*(float(v) for v in p))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "AffineTransform":
        return cls(tx=float(tx), ty=float(ty))

    @classmethod
    def similarity(cls, angle_deg=0.0, scale=1.0, tx=0.0, ty=0.0,
                   center=(0.0, 0.0)) -> "AffineTransform":
        """Rotation by ``angle_deg`` and isotropic ``scale`` about ``center``,
        followed by translation ``(tx, ty)``."""
        th = np.deg2rad(angle_deg)
        c, s = scale * np.cos(th), scale * np.sin(th)
        cx, cy = center
        lin = np.array([[c, -s], [s, c]])
        t = np.array([cx, cy]) - lin @ np.array([cx, cy]) + np.array([tx, ty])
        return cls(c, -s, s, c, float(t[0]), float(t[1]))

    @property
    def params(self) -> np.ndarray:
        return np.array([self.a11, self.a12, self.a21, self.a22, self.tx, self.ty])

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a21

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix."""
        return np.array([[self.a11, self.a12, self.tx],
                         [self.a21, self.a22, self.ty],
                         [0.0, 0.0, 1.0]])

    def inverse(self) -> "AffineTransform":
        if abs(self.det) < 1e-12:
            raise SingularTransform(f"determinant {self.det!r} is zero")
        return AffineTransform.from_matrix(np.linalg.inv(self.matrix()))

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Return ``self o other`` (apply ``other`` first)."""
        return AffineTransform.from_matrix(self.matrix() @ other.matrix())

    def apply(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        x, y = xy[..., 0], xy[..., 1]
        return np.stack([self.a11 * x + self.a12 * y + self.tx,
                         self.a21 * x + self.a22 * y + self.ty], axis=-1)

    def shifted(self, dx: float, dy: float) -> "AffineTransform":
        """Express this map in a frame whose origin sits at ``(dx, dy)``.

        If ``self`` acts on coordinates ``u = x - (dx, dy)``, the returned map
        acts on ``x`` directly.
        """
        t = AffineTransform.translation(dx, dy)
        return t.compose(self).compose(AffineTransform.translation(-dx, -dy))


@dataclass(frozen=True)
class CropWindow:
    center: tuple
    side: float


def as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValueError(f"image must be 2-D or 3-D, got shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] not in (1, 3) and arr.shape[2] < 1:
        raise ValueError("bad channel count")
    return arr


def bilinear_sample(img, x, y, mode="zero", return_grad=False):
    """Bilinearly sample ``img`` at continuous coordinates ``(x, y)``.

    Parameters
    ----------
    img : ndarray, (H, W) or (H, W, C)
    x, y : ndarray
        Sample coordinates, any matching shape ``S``.
    mode : {'zero', 'clamp'}
        ``'zero'`` treats every pixel outside the raster as 0; ``'clamp'``
        clamps coordinates into ``[0, W-1] x [0, H-1]`` first.
    return_grad : bool
        Also return the spatial derivatives ``d/dx`` and ``d/dy`` of the
        interpolant.

    Returns
    -------
    values : ndarray, shape ``S`` or ``S + (C,)``
    (gx, gy) : ndarrays of the same shape, only if ``return_grad``.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mode == "clamp":
        x = np.clip(x, 0.0, w - 1)
        y = np.clip(y, 0.0, h - 1)
    elif mode != "zero":
        raise ValueError(f"unknown mode {mode!r}")
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    def tap(yy, xx):
        ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        v = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        if img.ndim == 3:
            ok = ok[..., None]
        return np.where(ok, v, 0.0)

    v00 = tap(y0, x0)
    v01 = tap(y0, x0 + 1)
    v10 = tap(y0 + 1, x0)
    v11 = tap(y0 + 1, x0 + 1)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    out = top + fy * (bot - top)
    if not return_grad:
        return out
    gx = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
    gy = bot - top
    return out, (gx, gy)


# -- contour extraction -----------------------------------------------------

# Moore neighbourhood in screen-clockwise order, as (drow, dcol), starting west.
_MOORE = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)]


def _largest_component(fg: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(fg, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        raise EmptyMask("mask has no foreground pixel")
    sizes = np.bincount(labels.ravel())[1:]
    # argmax picks the lowest label on ties, i.e. the first in raster order
    return labels == (int(np.argmax(sizes)) + 1)


def _moore_trace(comp: np.ndarray) -> list:
    h, w = comp.shape
    rows, cols = np.nonzero(comp)
    start = (int(rows[0]), int(cols[0]))  # raster-first pixel

    def fg(r, c):
        return 0 <= r < h and 0 <= c < w and comp[r, c]

    chain = [start]
    cur = start
    back = 0  # west of the raster-first pixel is background
    first_move = None
    while True:
        for k in range(8):
            d = (back + k) % 8
            r, c = cur[0] + _MOORE[d][0], cur[1] + _MOORE[d][1]
            if fg(r, c):
                break
        else:
            return chain  # isolated pixel
        # backtrack = the neighbour examined just before the hit, seen from the
        # new pixel
        prev_d = (d + 7) % 8
        pr, pc = cur[0] + _MOORE[prev_d][0], cur[1] + _MOORE[prev_d][1]
        nxt = (r, c)
        move = (cur, nxt)
        if first_move is None:
            first_move = move
        elif move == first_move:
            chain.pop()  # the start pixel was appended again
            return chain
        dr, dc = pr - r, pc - c
        back = _MOORE.index((dr, dc))
        cur = nxt
        chain.append(cur)


def signed_area(points) -> float:
    """Shoelace area; positive for screen-clockwise order (y down)."""
    p = np.asarray(points, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def extract_contour(mask) -> PointSet:
    """Outer border pixel chain of the largest 8-connected component.

    The chain starts at the component's raster-first pixel and runs
    screen-clockwise, which is counter-clockwise in the mathematical
    convention once ``y`` is flipped (positive :func:`signed_area`).
    """
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m[..., 0]
    fg = m > 0.5
    if not fg.any():
        raise EmptyMask("mask has no foreground pixel")
    comp = _largest_component(fg)
    chain = _moore_trace(comp)
    if len(chain) < 3:
        raise DegenerateComponent(
            f"largest component has only {len(chain)} border pixels")
    pts = np.array([(c, r) for r, c in chain], dtype=np.float64)
    if signed_area(pts) < 0:
        pts = np.concatenate([pts[:1], pts[:0:-1]])
    return PointSet(pts)


def resample_uniform(contour: PointSet, n: int) -> PointSet:
    """``n`` points at equal arc-length spacing along the closed polyline.

    Sample 0 is the vertex with lexicographically smallest ``(y, x)``; the
    traversal direction of the input is kept.
    """
    pts = np.asarray(contour.points if isinstance(contour, PointSet) else contour,
                     dtype=np.float64)
    if len(pts) < 3:
        raise DegenerateContour("need at least 3 vertices")
    if n < 1:
        raise ValueError("n must be positive")
    start = int(np.lexsort((pts[:, 0], pts[:, 1]))[0])
    pts = np.roll(pts, -start, axis=0)
    closed = np.vstack([pts, pts[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    perim = float(seg.sum())
    if not perim > 0:
        raise DegenerateContour("contour perimeter is zero")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = perim * np.arange(n) / n
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    # skip zero-length segments the search may land on
    while True:
        zero = seg[idx] == 0
        if not zero.any():
            break
        idx[zero] += 1
    t = (targets - cum[idx]) / seg[idx]
    out = closed[idx] + t[:, None] * (closed[idx + 1] - closed[idx])
    return PointSet(out)


def apply_affine(ps: PointSet, a: AffineTransform) -> PointSet:
    return PointSet(a.apply(ps.points), ps.visible)


def warp_image(img, a: AffineTransform) -> np.ndarray:
    """Inverse-mapping bilinear warp; output pixel ``x`` reads ``img(a^-1 x)``.

    Source samples outside the raster contribute 0.
    """
    img = as_image(img)
    if abs(a.det) < 1e-12:
        raise SingularTransform(f"determinant {a.det!r} is zero")
    if a == AffineTransform.identity():
        return img.copy()
    inv = a.inverse()
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    src = inv.apply(np.stack([xx, yy], axis=-1))
    return bilinear_sample(img, src[..., 0], src[..., 1], mode="zero")


_ON_EDGE_TOL = 1e-9


def rasterize_mask(ps, w: int, h: int) -> np.ndarray:
    """Even-odd fill evaluated at pixel centers, as a float ``{0, 1}`` mask.

    Centers lying on an edge (within ``1e-9`` px) count as inside, so a
    polygon traced through border-pixel centers covers those pixels.
    """
    pts = np.asarray(ps.points if isinstance(ps, PointSet) else ps,
                     dtype=np.float64)
    if len(pts) < 3:
        raise TooFewPoints(f"polygon needs >= 3 points, got {len(pts)}")
    w, h = int(w), int(h)
    inside = np.zeros((h, w), dtype=bool)
    lo = np.floor(pts.min(axis=0)).astype(int)
    hi = np.ceil(pts.max(axis=0)).astype(int)
    c0, c1 = max(lo[0], 0), min(hi[0], w - 1)
    r0, r1 = max(lo[1], 0), min(hi[1], h - 1)
    if c0 > c1 or r0 > r1:
        return inside.astype(np.float64)
    py, px = np.mgrid[r0:r1 + 1, c0:c1 + 1].astype(np.float64)
    sub = np.zeros(px.shape, dtype=bool)
    edge = np.zeros(px.shape, dtype=bool)
    x1, y1 = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for i in range(len(pts)):
        dx, dy = x2[i] - x1[i], y2[i] - y1[i]
        cross = dx * (py - y1[i]) - dy * (px - x1[i])
        tol = _ON_EDGE_TOL * max(abs(dx), abs(dy), 1.0)
        edge |= ((np.abs(cross) <= tol)
                 & (px >= min(x1[i], x2[i]) - _ON_EDGE_TOL)
                 & (px <= max(x1[i], x2[i]) + _ON_EDGE_TOL)
                 & (py >= min(y1[i], y2[i]) - _ON_EDGE_TOL)
                 & (py <= max(y1[i], y2[i]) + _ON_EDGE_TOL))
        if dy == 0:
            continue
        straddle = (y1[i] > py) != (y2[i] > py)
        xc = x1[i] + (py - y1[i]) * dx / dy
        sub ^= straddle & (px < xc)
    sub |= edge
    inside[r0:r1 + 1, c0:c1 + 1] = sub
    return inside.astype(np.float64)


def crop_window(ps, scale: float = 2.0) -> CropWindow:
    """Square context window around the bounding box of ``ps``."""
    pts = np.asarray(ps.points if isinstance(ps, PointSet) else ps,
                     dtype=np.float64)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    bw, bh = hi - lo
    if bw == 0 and bh == 0:
        raise DegenerateBox("bounding box has zero extent")
    p = (bw + bh) / 2.0
    side = scale * np.sqrt((bw + p) * (bh + p))
    center = (lo + hi) / 2.0
    return CropWindow((float(center[0]), float(center[1])), float(side))


def crop_image(img, window: CropWindow):
    """Cut the integer-aligned square patch covering ``window``.

    Returns ``(patch, (x0, y0))`` where ``(x0, y0)`` is the full-image
    coordinate of the patch's pixel ``(0, 0)``. Out-of-raster regions are 0.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    size = max(int(np.ceil(window.side)), 1)
    x0 = int(np.floor(window.center[0] - size / 2.0))
    y0 = int(np.floor(window.center[1] - size / 2.0))
    patch = np.zeros((size, size) + img.shape[2:], dtype=np.float64)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, w), min(y0 + size, h)
    if sx1 > sx0 and sy1 > sy0:
        patch[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img[sy0:sy1, sx0:sx1]
    return patch, (x0, y0)
