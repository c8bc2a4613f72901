"""Check the non-convex convergence bound on the zero-noise golden problem.

Constants (smoothness, dissimilarity, local variance, clipping bias) are
measured on the problem itself, then the bound is compared with the smallest
average squared gradient norm seen across seeds.
"""

from __future__ import annotations

from locksim.cli import run_theory_check
from locksim.config import load_config
from locksim.server import schedule_T_for_dimension

cfg = load_config("theory-golden")
print(f"rounds for d = {cfg.dim}: {schedule_T_for_dimension(cfg.dim)} (config uses T = {cfg.T})")
report = run_theory_check(cfg, range(5), mc_draws=50)
print(report.text())
