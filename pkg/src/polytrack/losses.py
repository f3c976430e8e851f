"""Training objectives on point sets, with analytic point gradients.

Every loss returns a :class:`LossValue`. Where a gradient is defined it is
``d value / d pred`` (or ``d value / d cur`` for the regularizers), shaped
``(N, 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyMask, EmptySet, SizeMismatch
from .geometry import PointSet

__all__ = [
    "LossValue",
    "smooth_l1",
    "point_set_matching_loss",
    "pixel_matching_loss",
    "paired_l1_loss",
    "chamfer_loss",
    "reg_first_derivative",
    "reg_second_derivative",
    "cycle_consistency_loss",
]


@dataclass(frozen=True)
class LossValue:
    value: float
    grad: Optional[np.ndarray] = None

    def __float__(self):
        return float(self.value)


def _pts(ps) -> np.ndarray:
    return np.asarray(ps.points if isinstance(ps, PointSet) else ps,
                      dtype=np.float64).reshape(-1, 2)


def _same_size(a, b):
    if a.shape != b.shape:
        raise SizeMismatch(f"point sets differ in size: {len(a)} vs {len(b)}")


def _huber(d):
    ad = np.abs(d)
    return np.where(ad < 1.0, 0.5 * d * d, ad - 0.5)


def _huber_grad(d):
    return np.where(np.abs(d) < 1.0, d, np.sign(d))


def smooth_l1(d) -> float:
    """Sum over coordinates of the smooth-L1 (Huber, beta=1) penalty."""
    return float(np.sum(_huber(np.asarray(d, dtype=np.float64))))


def point_set_matching_loss(gt, pred) -> LossValue:
    """Smooth-L1 distance minimised over all cyclic start indices of ``gt``.

    Ties between shifts resolve to the smallest shift.
    """
    p, q = _pts(gt), _pts(pred)
    _same_size(p, q)
    n = len(p)
    # shifted[k, i] = gt[(k + i) % n]
    idx = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
    diff = p[idx] - q[None, :, :]
    per_shift = _huber(diff).sum(axis=(1, 2))
    k = int(np.argmin(per_shift))
    grad = -_huber_grad(diff[k])
    return LossValue(float(per_shift[k]), grad)


def pixel_matching_loss(cur, warped_prev, mask) -> LossValue:
    """Mean over mask pixels of the per-pixel Euclidean colour difference."""
    cur = np.asarray(cur, dtype=np.float64)
    prev = np.asarray(warped_prev, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 3:
        m = m[..., 0]
    if cur.shape != prev.shape or cur.shape[:2] != m.shape:
        raise SizeMismatch(
            f"shapes differ: {cur.shape}, {prev.shape}, {m.shape}")
    sel = m > 0.5
    k = int(sel.sum())
    if k == 0:
        raise EmptyMask("mask selects no pixel")
    d = cur - prev
    if d.ndim == 3:
        norms = np.sqrt(np.sum(d * d, axis=-1))
    else:
        norms = np.abs(d)
    return LossValue(float(norms[sel].sum() / k))


def paired_l1_loss(gt, pred) -> LossValue:
    """Sum of smooth-L1 distances between index-matched points."""
    p, q = _pts(gt), _pts(pred)
    _same_size(p, q)
    d = p - q
    return LossValue(float(_huber(d).sum()), -_huber_grad(d))


def chamfer_loss(gt, pred) -> LossValue:
    """Symmetric mean nearest-neighbour Euclidean distance.

    Each directed term is normalised by the size of the set it iterates over.
    The gradient is w.r.t. ``pred``; at ties the smallest index wins.
    """
    p, q = _pts(gt), _pts(pred)
    if len(p) == 0 or len(q) == 0:
        raise EmptySet("chamfer distance needs non-empty sets")
    diff = p[:, None, :] - q[None, :, :]          # (Ng, Np, 2)
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    nn_q = np.argmin(dist, axis=1)                # for each gt point
    nn_p = np.argmin(dist, axis=0)                # for each pred point
    ng, npred = len(p), len(q)
    rows = np.arange(ng)
    cols = np.arange(npred)
    d_gt = dist[rows, nn_q]
    d_pr = dist[nn_p, cols]
    value = d_gt.mean() + d_pr.mean()

    grad = np.zeros_like(q)
    # d||p - q|| / dq = (q - p) / ||p - q||; zero at coincidence
    with np.errstate(invalid="ignore", divide="ignore"):
        u_gt = np.where(d_gt[:, None] > 0,
                        -diff[rows, nn_q] / d_gt[:, None], 0.0)
        u_pr = np.where(d_pr[:, None] > 0,
                        -diff[nn_p, cols] / d_pr[:, None], 0.0)
    np.add.at(grad, nn_q, u_gt / ng)
    grad += u_pr / npred
    return LossValue(float(value), grad)


def _edges(p):
    return p - np.roll(p, 1, axis=0)  # e_i = P_i - P_{i-1}


def reg_first_derivative(prev, cur) -> LossValue:
    """Squared change of every cyclic edge length, summed over all N edges."""
    a, b = _pts(prev), _pts(cur)
    _same_size(a, b)
    ea, eb = _edges(a), _edges(b)
    la = np.hypot(ea[:, 0], ea[:, 1])
    lb = np.hypot(eb[:, 0], eb[:, 1])
    r = lb - la
    value = float(np.sum(r * r))
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(lb[:, None] > 0, eb / lb[:, None], 0.0)
    g_edge = 2.0 * r[:, None] * u
    # edge i depends on +P_i and -P_{i-1}
    grad = g_edge - np.roll(g_edge, -1, axis=0)
    return LossValue(value, grad)


def _second_diff(p):
    return np.roll(p, -1, axis=0) - 2.0 * p + np.roll(p, 1, axis=0)


def reg_second_derivative(prev, cur) -> LossValue:
    """Euclidean norm of the change of every cyclic second difference."""
    a, b = _pts(prev), _pts(cur)
    _same_size(a, b)
    delta = _second_diff(b) - _second_diff(a)
    norms = np.hypot(delta[:, 0], delta[:, 1])
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(norms[:, None] > 0, delta / norms[:, None], 0.0)
    # D_i touches P_{i+1}, P_i (x -2) and P_{i-1}
    grad = np.roll(u, 1, axis=0) - 2.0 * u + np.roll(u, -1, axis=0)
    return LossValue(float(norms.sum()), grad)


def cycle_consistency_loss(forward: Sequence, backward: Sequence) -> LossValue:
    """Mean smooth-L1 over all K*N forward/backward point pairs.

    The gradient is w.r.t. the stacked ``forward`` points, shaped (K, N, 2).
    """
    if len(forward) != len(backward):
        raise SizeMismatch(
            f"sequence lengths differ: {len(forward)} vs {len(backward)}")
    if len(forward) == 0:
        raise SizeMismatch("need at least one pair")
    f = [_pts(x) for x in forward]
    b = [_pts(x) for x in backward]
    for x, y in zip(f, b):
        _same_size(x, y)
    count = sum(len(x) for x in f)
    total = 0.0
    grads = []
    for x, y in zip(f, b):
        d = x - y
        total += float(_huber(d).sum())
        grads.append(_huber_grad(d) / count)
    grad = np.stack(grads) if len({len(x) for x in f}) == 1 else grads
    return LossValue(total / count, grad)
