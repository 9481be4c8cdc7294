#!/usr/bin/env python3
"""The full coarse-to-precise pipeline: bank, length estimator, pruner.

Trains a three-length bank, shows which preset the estimator picks as the
conditioning state approaches the goal, and histograms the pruned lengths
of generated trajectories against the measured expected length L.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from trajsynth import PointGoal, collect_offline, make_policy, train_bank, BankTrainConfig, measure_expected_length
from trajsynth.bank import bank_to_bytes

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

env = PointGoal()
trajs = collect_offline(env, make_policy(env, "expert"), 60, seed=7)
cfg = BankTrainConfig(train_steps=4000, hidden=(128, 128), diffusion_steps=50,
                      estimator_steps=2000, n_actions=env.spec.n_actions)
bank = train_bank(trajs, [5, 10, 15], cfg, np.random.default_rng(0))
print(f"bank: presets {bank.presets}, checkpoint {len(bank_to_bytes(bank))} bytes")

# the estimator reads remaining length off the state: far from the goal it
# wants the long model, close by the short one
for state in ([0.1, 0.1], [0.5, 0.5], [0.8, 0.8], [0.85, 0.88]):
    k_star = bank.estimate_length(np.asarray(state))
    print(f"state {state}: preset k* = {k_star}")

rng = np.random.default_rng(1)
expected = measure_expected_length(bank, env, 300, rng)
lengths = []
gen_rng = np.random.default_rng(2)
for _ in range(300):
    start = gen_rng.uniform(size=2)
    lengths.append(len(bank.generate(start, 0, gen_rng)))
print(f"measured expected length L = {expected}; mean generated length {np.mean(lengths):.1f}")

fig, ax = plt.subplots(figsize=(6, 4))
ax.hist(lengths, bins=np.arange(1, 17) - 0.5, rwidth=0.85)
ax.axvline(expected, color="tab:red", label=f"L = {expected}")
ax.set_xlabel("pruned trajectory length")
ax.set_ylabel("count")
ax.legend()
fig.savefig(OUT / "04_length_histogram.png", dpi=120)
print(f"figure: {OUT / '04_length_histogram.png'}")
