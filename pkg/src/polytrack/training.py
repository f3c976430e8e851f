"""Small-scale training of the local alignment network on synthetic data.

This is a trainability harness, not a benchmark trainer: samples are frame
pairs from synthetic sequences, the network sees features sampled at the
previous ground-truth points and must predict the displacement to the
current ones.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .geometry import rasterize_mask
from .lam import LamConfig, LamParams, LamState, lam_backward, lam_forward, \
    sample_point_features
from .losses import paired_l1_loss, reg_first_derivative, reg_second_derivative
from .synth import SynthConfig, generate_default_sequence
from .tracker import TrackerConfig, build_pyramid

logger = logging.getLogger(__name__)

__all__ = ["Sample", "Adam", "make_samples", "sample_loss", "train_lam",
           "TrainResult", "toy_sequences",
           "feature_stats", "fold_normalization"]


@dataclass
class Sample:
    feats: np.ndarray   # (N, C)
    start: np.ndarray   # (N, 2) points the offsets are added to
    target: np.ndarray  # (N, 2)


def make_samples(sequences: Iterable, stride: int = 4) -> List[Sample]:
    """Frame-pair samples; features are sampled at the previous ground-truth
    points from the stride-``stride`` level of :func:`build_pyramid` on
    ``(frame t, frame t-1, mask of the previous points)``."""
    out = []
    cfg = TrackerConfig(pyramid_strides=(stride,), local_iters=1)
    for seq in sequences:
        w, h = seq.gt.width, seq.gt.height
        for t in range(1, len(seq.frames)):
            start = seq.gt.frames[t - 1].points
            mask = rasterize_mask(start, w, h)
            pyr = build_pyramid(seq.frames[t], seq.frames[t - 1], mask, cfg)
            feats = sample_point_features(pyr[0], start)
            out.append(Sample(feats, start.copy(), seq.gt.frames[t].points.copy()))
    return out


def sample_loss(params: LamParams, s: Sample, w_r1=0.1, w_r2=0.1,
                grad: bool = True):
    """``paired_l1 + w_r1 R1 + w_r2 R2`` for one sample, with parameter grads."""
    n = len(s.start)
    state = LamState.zeros(n, params.config.hidden)
    off, _, cache = lam_forward(s.feats, None, state, params, return_cache=True)
    pred = s.start + off
    lc = paired_l1_loss(s.target, pred)
    r1 = reg_first_derivative(s.start, pred)
    r2 = reg_second_derivative(s.start, pred)
    value = lc.value + w_r1 * r1.value + w_r2 * r2.value
    if not grad:
        return value, None
    d_pred = lc.grad + w_r1 * r1.grad + w_r2 * r2.grad
    grads, _, _ = lam_backward(params, cache, d_pred)
    return value, grads


class Adam:
    def __init__(self, params: LamParams, lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: LamParams, grads: dict):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params.tensors[k] -= self.lr * (self.m[k] / c1) / (
                np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainResult:
    params: LamParams
    initial_loss: float
    final_loss: float
    zero_offset_loss: float
    history: List[float] = field(default_factory=list)


def feature_stats(samples: Sequence[Sample]):
    """Per-channel mean and std (std floored at 1e-8) over all samples."""
    f = np.concatenate([s.feats for s in samples])
    return f.mean(axis=0), np.maximum(f.std(axis=0), 1e-8)


def fold_normalization(params: LamParams, mean, std) -> LamParams:
    """Return parameters that accept raw features, given parameters trained
    on ``(feats - mean) / std``.

    The first convolution is linear in its input and a circular convolution
    maps a constant channel to a constant, so the shift moves into its bias.
    The positional-encoding channels are untouched.
    """
    cfg = params.config
    if cfg.net_in == cfg.hidden:
        raise ValueError("cannot fold: the first block has an identity skip")
    out = params.copy()
    w = out.tensors["block0.conv1.w"]  # (k, net_in, hidden)
    c = cfg.in_channels
    scaled = w[:, :c, :] / std[None, :, None]
    out.tensors["block0.conv1.b"] = (out.tensors["block0.conv1.b"]
                                     - np.einsum("kch,c->h", scaled, mean))
    w[:, :c, :] = scaled
    return out


def _mean_loss(params, samples, w_r1, w_r2):
    return float(np.mean([sample_loss(params, s, w_r1, w_r2, grad=False)[0]
                          for s in samples]))


def train_lam(samples: Sequence[Sample], config: LamConfig, steps: int = 500,
              lr: float = 3e-3, batch: int = 4, seed: int = 0,
              w_r1: float = 0.1, w_r2: float = 0.1,
              params: Optional[LamParams] = None,
              eval_every: int = 50) -> TrainResult:
    """Minibatch Adam on the paired + regularised objective.

    Features are standardised per channel for training; the returned
    parameters have the standardisation folded in, so they take raw
    features like any other parameters. Reported losses are on raw inputs.
    """
    rng = np.random.default_rng(seed)
    mean, std = feature_stats(samples)
    raw = samples
    samples = [Sample((s.feats - mean) / std, s.start, s.target)
               for s in samples]
    if params is None:
        params = LamParams.init(config, rng)
    opt = Adam(params, lr=lr)
    zero = LamParams.zeros(config)
    zero_loss = _mean_loss(zero, samples, w_r1, w_r2)
    initial = _mean_loss(params, samples, w_r1, w_r2)
    history = [initial]
    for step in range(1, steps + 1):
        idx = rng.choice(len(samples), size=min(batch, len(samples)),
                         replace=False)
        acc = None
        for i in idx:
            _, g = sample_loss(params, samples[i], w_r1, w_r2)
            if acc is None:
                acc = g
            else:
                for k in acc:
                    acc[k] = acc[k] + g[k]
        opt.step(params, {k: v / len(idx) for k, v in acc.items()})
        if step % eval_every == 0 or step == steps:
            history.append(_mean_loss(params, samples, w_r1, w_r2))
            logger.info("step %d loss %.4f", step, history[-1])
    params = fold_normalization(params, mean, std)
    final = _mean_loss(params, raw, w_r1, w_r2)
    return TrainResult(params, initial, final, zero_loss, history)


def toy_sequences(count: int = 20, points: int = 32, frames: int = 4,
                  canvas=(64, 64), seed: int = 0, **jitter):
    """Seeded tiny synthetic sequences for the training harness."""
    opts = dict(object_rotation=2.0, object_scale=0.02, object_translation=2.0,
                background_rotation=0.0, background_scale=0.0,
                background_translation=1.0)
    opts.update(jitter)
    return [generate_default_sequence(SynthConfig(
        seed=seed + i, frames=frames, points=points, canvas=canvas, **opts))
        for i in range(count)]
