"""Train a tiny local alignment network on synthetic frame pairs, then use it
as the tracker's refinement backend.

Run: python3 demos/train_toy_lam.py
"""
# %% setup
import tempfile
from pathlib import Path

import numpy as np

from polytrack import LamConfig, TrackerConfig, spatial_accuracy, track_sequence
from polytrack.lam import load_checkpoint, save_checkpoint
from polytrack.training import make_samples, toy_sequences, train_lam

# %% frame pairs: features at the previous points, targets at the next ones
seqs = toy_sequences(count=20, points=32)
samples = make_samples(seqs)
print("samples:", len(samples), "feature shape:", samples[0].feats.shape)

# %% train
cfg = LamConfig(in_channels=10, hidden=16, heads=2, blocks=2, kernel=3,
                head_hidden=16)
res = train_lam(samples, cfg, steps=500, seed=0)
print("loss history:", np.round(res.history, 3).tolist())
print(f"offsets fixed at zero would score {res.zero_offset_loss:.3f}")

# %% checkpoints store float32 weights
path = Path(tempfile.mkdtemp()) / "toy.ckpt"
save_checkpoint(res.params, path)
params = load_checkpoint(path)

# %% track a held-out clip with the learned backend
# The network was trained on raw frame pairs with one update, while the
# tracker aligns globally first; a single refinement pass matches training
# best. This is a trainability check, so expect the energy backend to win.
held = toy_sequences(count=1, points=32, frames=6, seed=100)[0]
for name, tcfg in [
        ("energy", TrackerConfig(n_points=32)),
        ("lam, 1 pass", TrackerConfig(n_points=32, backend="lam",
                                      pyramid_strides=(4,), local_iters=1)),
        ("lam, 5 passes", TrackerConfig(n_points=32, backend="lam"))]:
    pred = track_sequence(held.frames, held.gt.frames[0], tcfg, params)
    err = np.linalg.norm(pred.points() - held.gt.points(), axis=-1).mean()
    print(f"{name}: mean error {err:.2f} px, "
          f"SA_.04 {spatial_accuracy(pred, held.gt, 0.04):.2f}")
