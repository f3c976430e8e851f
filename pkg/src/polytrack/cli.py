"""Command-line entry point: ``polytrack {synth,track,eval,check-grad,overlay}``.

Exit codes: 0 on success, 1 on a usage error, 2 on a data error. Errors are
reported as a single line on standard error.
"""
from __future__ import annotations

import argparse
import colorsys
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import gradcheck
from .errors import EmptyFrames, PolytrackError, ShapeMismatch
from .geometry import as_image
from .io import (atomic_write_text, list_frames, load_frames, load_json,
                 load_pnm, load_track, save_pnm, save_track)
from .lam import load_checkpoint
from .metrics import evaluate
from .synth import SynthConfig, generate_default_sequence
from .tracker import TrackerConfig, track_sequence

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _taus(text: str) -> List[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad tau list {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("taus must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polytrack", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate synthetic sequences")
    s.add_argument("--config", required=True, help="SynthConfig JSON "
                   "(optional extra key 'sequences')")
    s.add_argument("--out", required=True)

    t = sub.add_parser("track", help="track an initial polygon through frames")
    t.add_argument("--frames", required=True, help="directory of .pgm/.ppm")
    t.add_argument("--init", required=True, help="track file; frame 0 is used")
    t.add_argument("--config", help="TrackerConfig JSON (optional extra key "
                   "'lam_checkpoint' for the lam backend)")
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="write per-frame diagnostics JSON here")

    e = sub.add_parser("eval", help="score a predicted track")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--pred-masks")
    e.add_argument("--gt-masks")
    e.add_argument("--taus", type=_taus, default=[0.04, 0.08, 0.16])

    g = sub.add_parser("check-grad", help="finite-difference gradient suites")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)

    o = sub.add_parser("overlay", help="draw a track over its frames")
    o.add_argument("--frames", required=True)
    o.add_argument("--track", required=True)
    o.add_argument("--out", required=True)
    return p


# -- subcommands --------------------------------------------------------------

def _cmd_synth(args) -> int:
    raw = load_json(args.config)
    count = int(raw.get("sequences", 1))
    if count < 1:
        raise ValueError("sequences must be >= 1")
    base = SynthConfig.from_dict(raw)
    out = Path(args.out)
    entries = []
    for i in range(count):
        cfg = SynthConfig.from_dict({**base.to_dict(), "seed": base.seed + i})
        seq = generate_default_sequence(cfg)
        root = out / f"seq{i:03d}"
        frame_paths, mask_paths = [], []
        for t, (img, mask) in enumerate(zip(seq.frames, seq.masks)):
            fp = root / "frames" / f"{t:05d}.{'ppm' if img.ndim == 3 else 'pgm'}"
            mp = root / "masks" / f"{t:05d}.pgm"
            save_pnm(fp, img)
            save_pnm(mp, mask.astype(np.float64))
            frame_paths.append(str(fp.relative_to(out)))
            mask_paths.append(str(mp.relative_to(out)))
        save_track(root / "gt.json", seq.gt)
        entries.append({"seed": cfg.seed, "frames": frame_paths,
                        "masks": mask_paths,
                        "gt": str((root / "gt.json").relative_to(out))})
    manifest = {"seed": base.seed, "config": base.to_dict(),
                "sequences": entries}
    atomic_write_text(out / "manifest.json",
                      json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_track(args) -> int:
    raw = load_json(args.config) if args.config else {}
    init = load_track(args.init).frames[0]
    if "n_points" not in raw:
        raw = {**raw, "n_points": len(init)}
    cfg = TrackerConfig.from_dict(raw)
    params = None
    if cfg.backend == "lam":
        ckpt = raw.get("lam_checkpoint")
        if not ckpt:
            raise ValueError("lam backend needs 'lam_checkpoint' in the config")
        params = load_checkpoint(Path(args.config).parent / ckpt)
    frames = load_frames(args.frames)
    if not frames:
        raise EmptyFrames(f"no .pgm/.ppm frames in {args.frames}")
    log = [] if args.log else None
    pred = track_sequence(frames, init, cfg, params, log=log)
    save_track(args.out, pred)
    if args.log:
        atomic_write_text(args.log, json.dumps(log, indent=1) + "\n")
    return EXIT_OK


def _masks(directory):
    return [m if m.ndim == 2 else m.mean(axis=2) for m in load_frames(directory)]


def _cmd_eval(args) -> int:
    pred = load_track(args.pred)
    gt = load_track(args.gt)
    if (args.pred_masks is None) != (args.gt_masks is None):
        raise UsageError("--pred-masks and --gt-masks go together")
    pm = _masks(args.pred_masks) if args.pred_masks else None
    gm = _masks(args.gt_masks) if args.gt_masks else None
    report = evaluate(pred, gt, args.taus, pm, gm)
    sys.stdout.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_check_grad(args) -> int:
    results = gradcheck.run_all(count=args.count, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _draw_segment(img, p, q, color):
    h, w = img.shape[:2]
    steps = int(np.ceil(2 * np.hypot(*(q - p)))) + 1
    s = np.linspace(0.0, 1.0, steps)[:, None]
    xy = np.rint(p + s * (q - p)).astype(int)
    ok = (xy[:, 0] >= 0) & (xy[:, 0] < w) & (xy[:, 1] >= 0) & (xy[:, 1] < h)
    img[xy[ok, 1], xy[ok, 0]] = color


def draw_overlay(frame, points, visible=None) -> np.ndarray:
    """RGB copy of ``frame`` with the closed polygon in white and each point
    as a 3x3 dot whose hue encodes its index (hollow when not visible)."""
    img = as_image(frame)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    elif img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    img = 0.7 * img.copy()
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    vis = np.ones(n, bool) if visible is None else np.asarray(visible, bool)
    for i in range(n):
        _draw_segment(img, pts[i], pts[(i + 1) % n], (1.0, 1.0, 1.0))
    h, w = img.shape[:2]
    for i, (x, y) in enumerate(np.rint(pts).astype(int)):
        color = colorsys.hsv_to_rgb(i / n, 1.0, 1.0)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if not vis[i] and dx == 0 and dy == 0:
                    continue
                if 0 <= x + dx < w and 0 <= y + dy < h:
                    img[y + dy, x + dx] = color
    return img


def _cmd_overlay(args) -> int:
    paths = list_frames(args.frames)
    track = load_track(args.track)
    if len(paths) != len(track):
        raise ShapeMismatch(f"{len(paths)} frames but the track has "
                            f"{len(track)}")
    out = Path(args.out)
    for path, fr in zip(paths, track.frames):
        img = load_pnm(path)
        save_pnm(out / (path.stem + ".ppm"),
                 draw_overlay(img, fr.points, fr.visible))
    return EXIT_OK


_COMMANDS = {"synth": _cmd_synth, "track": _cmd_track, "eval": _cmd_eval,
             "check-grad": _cmd_check_grad, "overlay": _cmd_overlay}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PolytrackError, ValueError, OSError, KeyError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_DATA


def _entry() -> None:  # console script
    sys.exit(main())


if __name__ == "__main__":
    _entry()
