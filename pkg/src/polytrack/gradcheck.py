"""Finite-difference checks of the analytic gradients.

Each suite draws seeded random instances, skips those that land near a
kink or a nearest-neighbour tie (where the one-sided derivatives disagree),
and compares the analytic gradient with central differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import losses
from .lam import LamConfig, LamParams, LamState, lam_backward, lam_forward

__all__ = ["GradCheckResult", "central_difference", "relative_error",
           "loss_suites", "lam_suite", "run_all"]


@dataclass
class GradCheckResult:
    name: str
    instances: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.instances > 0 and self.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.instances} instances, "
                f"max rel err {self.max_rel_error:.2e} (tol {self.tolerance:g})")


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray,
                       h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    den = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / den)


# -- kink / tie guards --------------------------------------------------------

def _near_huber_kink(d, margin):
    return bool(np.any(np.abs(np.abs(d) - 1.0) < margin))


def _chamfer_ok(gt, pred, margin):
    d = np.linalg.norm(gt[:, None, :] - pred[None, :, :], axis=-1)
    if d.min() < margin:
        return False
    for table in (d, d.T):
        s = np.sort(table, axis=1)
        if np.any(s[:, 1] - s[:, 0] < margin):
            return False
    return True


def _second_diff(p):
    return np.roll(p, -1, axis=0) - 2.0 * p + np.roll(p, 1, axis=0)


def _edge_lengths(p):
    return np.linalg.norm(p - np.roll(p, 1, axis=0), axis=1)


# -- suites -------------------------------------------------------------------

def _check(name, rng, draw, value, grad, count, tol, h, margin):
    worst, used, tries = 0.0, 0, 0
    while used < count and tries < 20 * count:
        tries += 1
        inst = draw(rng)
        if inst is None:
            continue
        x0, ok = inst
        if not ok(x0, margin):
            continue
        num = central_difference(lambda x: value(x), x0, h)
        worst = max(worst, relative_error(grad(x0), num))
        used += 1
    return GradCheckResult(name, used, worst, tol)


def loss_suites(count: int = 100, n: int = 16, seed: int = 0,
                h: float = 1e-5, tol: float = 1e-4,
                margin: float = 1e-3) -> List[GradCheckResult]:
    """Gradient checks for the point-set losses and regularisers."""
    rng = np.random.default_rng(seed)
    out = []

    gt = {}

    def draw_pair(r):
        gt["p"] = r.uniform(0, 100, (n, 2))
        return gt["p"] + r.normal(0, 1.5, (n, 2)), None

    def pair(ok):
        def draw(r):
            x, _ = draw_pair(r)
            return x, ok
        return draw

    out.append(_check(
        "paired_l1_loss", rng,
        pair(lambda x, m: not _near_huber_kink(x - gt["p"], m)),
        lambda x: losses.paired_l1_loss(gt["p"], x).value,
        lambda x: losses.paired_l1_loss(gt["p"], x).grad,
        count, tol, h, margin))

    def psm_ok(x, m):
        if _near_huber_kink(x - gt["p"], m):
            return False
        # unique arg-min shift with a clear gap
        vals = sorted(losses.smooth_l1(np.roll(gt["p"], -k, axis=0) - x)
                      for k in range(n))
        return vals[1] - vals[0] > m

    out.append(_check(
        "point_set_matching_loss", rng, pair(psm_ok),
        lambda x: losses.point_set_matching_loss(gt["p"], x).value,
        lambda x: losses.point_set_matching_loss(gt["p"], x).grad,
        count, tol, h, margin))

    out.append(_check(
        "chamfer_loss", rng, pair(lambda x, m: _chamfer_ok(gt["p"], x, m)),
        lambda x: losses.chamfer_loss(gt["p"], x).value,
        lambda x: losses.chamfer_loss(gt["p"], x).grad,
        count, tol, h, margin))

    out.append(_check(
        "reg_first_derivative", rng,
        pair(lambda x, m: _edge_lengths(x).min() > m),
        lambda x: losses.reg_first_derivative(gt["p"], x).value,
        lambda x: losses.reg_first_derivative(gt["p"], x).grad,
        count, tol, h, margin))

    out.append(_check(
        "reg_second_derivative", rng,
        pair(lambda x, m: np.linalg.norm(
            _second_diff(x) - _second_diff(gt["p"]), axis=1).min() > m),
        lambda x: losses.reg_second_derivative(gt["p"], x).value,
        lambda x: losses.reg_second_derivative(gt["p"], x).grad,
        count, tol, h, margin))

    k = 3
    back = {}

    def draw_cycle(r):
        fwd = r.uniform(0, 100, (k, n, 2))
        back["b"] = fwd + r.normal(0, 1.5, (k, n, 2))
        return fwd, lambda x, m: not _near_huber_kink(x - back["b"], m)

    out.append(_check(
        "cycle_consistency_loss", rng, draw_cycle,
        lambda x: losses.cycle_consistency_loss(list(x), list(back["b"])).value,
        lambda x: losses.cycle_consistency_loss(list(x), list(back["b"])).grad,
        count, tol, h, margin))
    return out


TINY_LAM = LamConfig(in_channels=3, hidden=8, heads=2, blocks=2, kernel=3,
                     head_hidden=8)


def lam_suite(config: LamConfig = TINY_LAM, n: int = 8, seed: int = 0,
              h: float = 1e-4, tol: float = 1e-3,
              floor: float = 1e-6) -> List[GradCheckResult]:
    """Per-parameter-group check of ``d sum(offsets) / d params``.

    The objective also reads the returned LSTM state (with fixed random
    weights) so the state path is exercised. ``floor`` keeps groups whose
    gradient is identically zero (the key bias, which cancels in softmax)
    from dividing noise by noise.
    """
    rng = np.random.default_rng(seed)
    params = LamParams.init(config, rng, gain=1.0)
    for name in params.names():  # non-zero biases so every path is live
        if params.tensors[name].ndim == 1:
            params.tensors[name] = rng.normal(0, 0.3, params.tensors[name].shape)
    feats = rng.normal(0, 1, (n, config.in_channels))
    state = LamState(rng.normal(0, 0.5, (n, config.hidden)),
                     rng.normal(0, 0.5, (n, config.hidden)))
    wh = rng.normal(0, 1, (n, config.hidden))
    wc = rng.normal(0, 1, (n, config.hidden))

    def objective(p):
        off, st = lam_forward(feats, None, state, p)
        return off.sum() + (wh * st.h).sum() + (wc * st.c).sum()

    off, st, cache = lam_forward(feats, None, state, params, return_cache=True)
    grads, d_feats, d_state = lam_backward(
        params, cache, np.ones_like(off), LamState(wh, wc))
    out = []
    for name in params.names():
        base = params.tensors[name]

        def f(x, name=name):
            p = params.copy()
            p.tensors[name] = x
            return objective(p)

        num = central_difference(f, base, h)
        err = relative_error(grads[name], num, floor)
        out.append(GradCheckResult(f"lam.{name}", 1, err, tol))

    num = central_difference(
        lambda x: (lambda o, s: o.sum() + (wh * s.h).sum() + (wc * s.c).sum())(
            *lam_forward(x, None, state, params)), feats, h)
    out.append(GradCheckResult("lam.features", 1,
                               relative_error(d_feats, num, floor), tol))
    for label, attr in (("h", "h"), ("c", "c")):
        def g(x, attr=attr):
            s = LamState(x, state.c) if attr == "h" else LamState(state.h, x)
            o, s2 = lam_forward(feats, None, s, params)
            return o.sum() + (wh * s2.h).sum() + (wc * s2.c).sum()
        num = central_difference(g, getattr(state, attr), h)
        out.append(GradCheckResult(
            f"lam.state_{label}", 1,
            relative_error(getattr(d_state, attr), num, floor), tol))
    return out


def run_all(count: int = 100, seed: int = 0) -> List[GradCheckResult]:
    return loss_suites(count=count, seed=seed) + lam_suite(seed=seed)


def summary(results: List[GradCheckResult]) -> Dict[str, object]:
    return {"passed": all(r.passed for r in results),
            "suites": [{"name": r.name, "instances": r.instances,
                        "max_rel_error": r.max_rel_error,
                        "tolerance": r.tolerance} for r in results]}
