"""Compare the three aggregation rules on fixed client gradients.

The scaled rule averages to the plain client mean. The unscaled and literal
rules average to probability-weighted sums, so clients with large norms count
for more.
"""

from __future__ import annotations

import numpy as np

from locksim import GradientRelease, NormRelease, SamplingConfig
from locksim import sampling

cfg = SamplingConfig(n=8, m=4, k=2, clip=1.0)
rng = np.random.default_rng(0)
g = rng.normal(size=(cfg.n, 3))
g /= np.maximum(1.0, np.linalg.norm(g, axis=1, keepdims=True))
norms = np.linalg.norm(g, axis=1)
releases = [GradientRelease(i, g[i]) for i in range(cfg.n)]
# one probability map for all rounds, from the noiseless norms of every client
fixed, _, _ = sampling.stage2_probs(cfg, [NormRelease(i, float(z)) for i, z in enumerate(norms)])
p = np.array([fixed[i] for i in range(cfg.n)])

rounds = 40_000
means = {}
for mode in ("scaled", "unscaled", "literal"):
    acc = np.zeros(3)
    for _ in range(rounds):
        pre = sampling.stage1_sample(cfg, rng)
        probs = {int(i): fixed[int(i)] for i in pre}
        batch = sampling.stage2_sample(probs, cfg.k, rng)
        acc += sampling.aggregate(mode, [releases[i] for i in batch], probs, cfg, 3)
    means[mode] = acc / rounds

targets = {"scaled": g.mean(axis=0),
           "unscaled": (p[:, None] * g).sum(axis=0),
           "literal": (p[:, None] * g).mean(axis=0)}
np.set_printoptions(precision=4, suppress=True)
for mode in means:
    print(f"{mode:9s} MC mean {means[mode]}  expected {targets[mode]}")
print(f"plain client mean     {g.mean(axis=0)}")
