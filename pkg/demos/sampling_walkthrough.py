"""Walk through one round of two-stage client sampling by hand.

Twelve clients, a 50% pre-sample, and noisy norm releases. Prints the
probabilities each stage assigns, then checks the average batch size over
many rounds against the budget b = m/k.
"""

from __future__ import annotations

import numpy as np

from locksim import NormRelease, SamplingConfig
from locksim import sampling

cfg = SamplingConfig(n=12, m=6, k=2, clip=1.0)
rng = np.random.default_rng(3)
true_norms = np.linspace(0.05, 1.0, cfg.n)

pre = sampling.stage1_sample(cfg, rng)
print(f"pre-sample (rate {cfg.rate:.2f}): {pre.tolist()}")

noisy = true_norms[pre] + rng.normal(0, 0.1, pre.size)
releases = [NormRelease(int(i), max(float(z), 1e-6)) for i, z in zip(pre, noisy)]
probs, z_sum, z_clamped = sampling.stage2_probs(cfg, releases)
print(f"released norm sum {z_sum:.3f}, clamped to {z_clamped:.3f}")
for r in releases:
    print(f"  client {r.client_id:2d}  norm {true_norms[r.client_id]:.2f}  "
          f"released {r.z_tilde:.3f}  p {probs[r.client_id]:.3f}")

batch = sampling.stage2_sample(probs, cfg.k, rng)
print(f"final batch: {batch.tolist()}")

sizes = []
for _ in range(20_000):
    pre = sampling.stage1_sample(cfg, rng)
    if pre.size == 0:
        sizes.append(0)
        continue
    rel = [NormRelease(int(i), float(true_norms[i])) for i in pre]
    sizes.append(sampling.stage2_sample(sampling.stage2_probs(cfg, rel)[0], cfg.k, rng).size)
print(f"mean batch size over 20000 rounds: {np.mean(sizes):.3f} (budget b = {cfg.b:g})")
