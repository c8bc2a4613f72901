"""Train on a heterogeneous problem, then pit norm-based sampling against uniform.

Writes nothing to disk; see ``locksim run`` and ``locksim compare`` for the
file-producing versions. Takes roughly half a minute.
"""

from __future__ import annotations

from locksim import compare_uniform_vs_locks, run
from locksim.config import load_config
from locksim.server import build_problem

cfg = load_config("convex-small")
quiet = run(load_config("convex-small", ["nonprivate=true", "sigma_s=0", "sigma_0=0"]))
print(f"convex-small without noise: loss {quiet.traces[0].loss:.4f} -> {quiet.final_loss:.4f} "
      f"over {cfg.T} rounds")
# unit noise multipliers against gradients clipped to norm 1 swamp the signal here
res = run(cfg)
print(f"convex-small with noise:    loss {res.traces[0].loss:.4f} -> {res.final_loss:.4f}, "
      f"epsilon {res.epsilon:.2f} at delta {cfg.delta:g}")
skipped = sum(tr.skipped for tr in res.traces)
print(f"rounds with an empty batch: {skipped} of {cfg.T}")

cfg = load_config("hetero-noisy", ["T=150"])
cmp = compare_uniform_vs_locks(cfg, range(6), build_problem(cfg))
print("\nhetero-noisy, 6 paired seeds, 150 rounds")
print(cmp.report())
