"""How much noise does a given privacy budget need?

Calibrates the noise multiplier for a few target epsilons at a 20% sampling
rate over 100 rounds, then shows the epsilon each multiplier buys and how it
grows with the number of rounds.
"""

from __future__ import annotations

import math

from locksim import dp

delta, rounds, rate = 1e-5, 100, 0.2
print(f"delta = {delta:g}, rounds = {rounds}, sampling rate = {rate:g}")
for target in (1.0, 10.0, 50.0, math.inf):
    z = dp.calibrate_noise_multiplier(target, delta, rounds, rate)
    print(f"  epsilon {target:>5g}: noise multiplier {z:.4f}")

z = 1.32
print(f"\nepsilon reached at multiplier {z} as rounds accumulate:")
for T in (10, 50, 100, 200, 400):
    print(f"  T = {T:3d}: epsilon = {dp.epsilon_for_multiplier(z, delta, T, rate):.3f}")

print("\nsame per-step guarantee under strong composition instead (eps_step 0.1, delta_step 1e-7):")
for T in (10, 100):
    sc = dp.strong_composition(0.1, 1e-7, T)
    print(f"  T = {T:3d}: epsilon = {sc.epsilon:.3f}, delta = {sc.delta:.2e}")
