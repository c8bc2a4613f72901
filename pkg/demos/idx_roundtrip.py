"""Write a tiny IDX image/label pair, read it back, and train on it.

Real MNIST files work the same way: pass their paths as idx_images and
idx_labels.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from locksim import idx, run
from locksim.config import load_config

rng = np.random.default_rng(0)
digits = rng.integers(0, 10, 200)
# brighter images for larger digits so the binary label is learnable
images = np.clip(rng.normal(digits[:, None, None] * 20, 30, (200, 6, 6)), 0, 255)

with tempfile.TemporaryDirectory() as tmp:
    img, lab = Path(tmp) / "images.idx3", Path(tmp) / "labels.idx1"
    idx.write_idx(img, images)
    idx.write_idx(lab, digits)
    data = idx.load_idx(img, lab)
    print(f"loaded {data.features.shape[0]} samples of dimension {data.features.shape[1]}, "
          f"{int(data.labels.sum())} labelled >= 5")
    cfg = load_config("mnist-desk", [f"idx_images={img}", f"idx_labels={lab}",
                                     "n_clients=20", "m=4", "T=30", "nonprivate=true",
                                     "sigma_s=0", "sigma_0=0"])
    res = run(cfg)
    print(f"loss {res.traces[0].loss:.4f} -> {res.final_loss:.4f} after {cfg.T} rounds")
