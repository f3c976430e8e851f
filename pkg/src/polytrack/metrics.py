"""Evaluation metrics for point-set tracks and masks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import NoVisiblePoints, ShapeMismatch, SizeMismatch, TooFewFrames
from .geometry import PointSet, rasterize_mask

__all__ = [
    "TrackAnnotation",
    "MetricReport",
    "spatial_accuracy",
    "temporal_accuracy",
    "region_similarity",
    "boundary_accuracy",
    "average_accuracy",
    "sequence_stats",
    "evaluate",
]


@dataclass
class TrackAnnotation:
    """Per-frame point sets of one tracked polygon on a ``width x height`` raster."""

    width: int
    height: int
    frames: List[PointSet] = field(default_factory=list)

    def __post_init__(self):
        self.frames = [f if isinstance(f, PointSet) else PointSet(f)
                       for f in self.frames]
        if not self.frames:
            raise ValueError("annotation needs at least one frame")
        n = {len(f) for f in self.frames}
        if len(n) != 1:
            raise ValueError(f"frames have differing point counts {sorted(n)}")

    def __len__(self):
        return len(self.frames)

    @property
    def n_points(self) -> int:
        return len(self.frames[0])

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def points(self) -> np.ndarray:
        """Stacked coordinates, shape (T, N, 2)."""
        return np.stack([f.points for f in self.frames])

    def visibility(self) -> np.ndarray:
        return np.stack([f.visible for f in self.frames])

    def __eq__(self, other):
        if not isinstance(other, TrackAnnotation):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and len(self.frames) == len(other.frames)
                and all(a == b for a, b in zip(self.frames, other.frames)))


@dataclass
class MetricReport:
    sa: Dict[float, float]
    ta: Dict[float, float]
    j: Optional[float] = None
    f: Optional[float] = None
    avg_acc: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "sa": {f"{k:g}": v for k, v in self.sa.items()},
            "ta": {f"{k:g}": v for k, v in self.ta.items()},
            "j": self.j,
            "f": self.f,
            "avg_acc": self.avg_acc,
        }


def _check_pair(pred: TrackAnnotation, gt: TrackAnnotation):
    if (len(pred) != len(gt) or pred.n_points != gt.n_points
            or pred.width != gt.width or pred.height != gt.height):
        raise ShapeMismatch(
            f"prediction {len(pred)}x{pred.n_points} ({pred.width}x{pred.height})"
            f" vs ground truth {len(gt)}x{gt.n_points} ({gt.width}x{gt.height})")


def spatial_accuracy(pred: TrackAnnotation, gt: TrackAnnotation,
                     tau: float) -> float:
    """Fraction of visible ground-truth points predicted within ``tau * diag``."""
    _check_pair(pred, gt)
    vis = gt.visibility()
    if not vis.any():
        raise NoVisiblePoints("ground truth has no visible point")
    err = np.linalg.norm(pred.points() - gt.points(), axis=-1)
    hit = err < tau * gt.diagonal
    return float(hit[vis].sum() / vis.sum())


def temporal_accuracy(pred: TrackAnnotation, gt: TrackAnnotation,
                      tau: float) -> float:
    """Fraction of consecutive-frame error changes below ``tau * diag``.

    A term counts only when the point is visible in both ground-truth frames.
    """
    _check_pair(pred, gt)
    if len(gt) < 2:
        raise TooFewFrames("temporal accuracy needs at least 2 frames")
    e = pred.points() - gt.points()
    de = np.linalg.norm(e[1:] - e[:-1], axis=-1)
    vis = gt.visibility()
    both = vis[1:] & vis[:-1]
    if not both.any():
        raise NoVisiblePoints("no point is visible in two consecutive frames")
    hit = de < tau * gt.diagonal
    return float(hit[both].sum() / both.sum())


def _binary_pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim == 3:
        a = a[..., 0]
    if b.ndim == 3:
        b = b[..., 0]
    if a.shape != b.shape:
        raise SizeMismatch(f"mask sizes differ: {a.shape} vs {b.shape}")
    return a > 0.5, b > 0.5


def region_similarity(pred_mask, gt_mask) -> float:
    """Intersection over union; 1 when both masks are empty."""
    p, g = _binary_pair(pred_mask, gt_mask)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


_CROSS = ndimage.generate_binary_structure(2, 1)


def _boundary(m: np.ndarray) -> np.ndarray:
    # foreground pixels with a 4-neighbour in the background (outside counts)
    eroded = ndimage.binary_erosion(m, structure=_CROSS, border_value=0)
    return m & ~eroded


def boundary_accuracy(pred_mask, gt_mask) -> float:
    """Boundary F-measure with matching radius ``ceil(0.008 * diagonal)``."""
    p, g = _binary_pair(pred_mask, gt_mask)
    bp, bg = _boundary(p), _boundary(g)
    np_, ng = int(bp.sum()), int(bg.sum())
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    h, w = p.shape
    radius = math.ceil(0.008 * math.hypot(w, h))
    dist_to_g = ndimage.distance_transform_edt(~bg)
    dist_to_p = ndimage.distance_transform_edt(~bp)
    precision = float((dist_to_g[bp] <= radius).sum() / np_)
    recall = float((dist_to_p[bg] <= radius).sum() / ng)
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def average_accuracy(pred_mask, gt_mask) -> float:
    p, g = _binary_pair(pred_mask, gt_mask)
    return float((p == g).mean())


def sequence_stats(gt: TrackAnnotation):
    """Motion (MO) and scale change (SC) of a ground-truth track.

    Coordinates are first divided by ``(width, height)``. Both statistics are
    means over the frame transitions ``t >= 1``; a term is used only when the
    points it involves are visible in both frames.
    """
    if len(gt) < 2:
        raise TooFewFrames("sequence statistics need at least 2 frames")
    p = gt.points() / np.array([gt.width, gt.height], dtype=np.float64)
    vis = gt.visibility()
    both = vis[1:] & vis[:-1]
    step = np.linalg.norm(p[1:] - p[:-1], axis=-1)
    edges = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=-1)
    dlen = np.abs(edges[1:] - edges[:-1])
    edge_ok = both & np.roll(both, 1, axis=1)
    mo = float(step[both].mean()) if both.any() else 0.0
    sc = float(dlen[edge_ok].mean()) if edge_ok.any() else 0.0
    return mo, sc


def evaluate(pred: TrackAnnotation, gt: TrackAnnotation,
             taus: Sequence[float] = (0.04, 0.08, 0.16),
             pred_masks: Optional[Sequence] = None,
             gt_masks: Optional[Sequence] = None) -> MetricReport:
    """Full report. Masks default to the rasterised polygons of each track."""
    sa = {float(t): spatial_accuracy(pred, gt, t) for t in taus}
    ta = ({float(t): temporal_accuracy(pred, gt, t) for t in taus}
          if len(gt) >= 2 else {})
    if pred_masks is None:
        pred_masks = [rasterize_mask(f, pred.width, pred.height)
                      for f in pred.frames]
    if gt_masks is None:
        gt_masks = [rasterize_mask(f, gt.width, gt.height) for f in gt.frames]
    if len(pred_masks) != len(gt_masks):
        raise ShapeMismatch("mask sequences differ in length")
    j = float(np.mean([region_similarity(a, b)
                       for a, b in zip(pred_masks, gt_masks)]))
    f = float(np.mean([boundary_accuracy(a, b)
                       for a, b in zip(pred_masks, gt_masks)]))
    acc = float(np.mean([average_accuracy(a, b)
                         for a, b in zip(pred_masks, gt_masks)]))
    return MetricReport(sa, ta, j, f, acc)
