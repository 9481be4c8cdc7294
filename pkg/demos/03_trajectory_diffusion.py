#!/usr/bin/env python3
"""A single fixed-length trajectory diffuser, end to end.

Builds the duplicate-padded window corpus from expert episodes, trains a
k=10 denoiser, then samples windows conditioned on chosen start states and
shows how the tail pruner finds the ending position.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from trajsynth import PointGoal, collect_offline, make_policy, prune, pad_and_slice
from trajsynth.bank import similarity
from trajsynth.diffusion import NoiseSchedule, TrajDiffusionModel

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

K = 10
env = PointGoal()
trajs = collect_offline(env, make_policy(env, "expert"), 60, seed=7)

parts = [pad_and_slice(t, K, env.spec.n_actions) for t in trajs]
windows = np.vstack([p[0] for p in parts])
conds = np.vstack([p[1] for p in parts])
print(f"corpus: {len(windows)} windows of {windows.shape[1]} dims from {len(trajs)} episodes")

model = TrajDiffusionModel(K, 2, 4, hidden=(128, 128), schedule=NoiseSchedule.linear(100), rng=np.random.default_rng(0))
model.fit_normalization(windows)
corpus = model.normalize(windows, conds)

rng = np.random.default_rng(0)
losses = []
for step in range(6000):
    idx = rng.integers(0, len(corpus), size=64)
    losses.append(model.train_step(corpus.take(idx), rng))
print(f"noise-prediction loss: {np.median(losses[:100]):.1f} -> {np.median(losses[-100:]):.1f}")

# sample from three different start states; first record is inpainted exactly
fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
sample_rng = np.random.default_rng(3)
for start in ([0.2, 0.2], [0.5, 0.8], [0.8, 0.3]):
    start = np.asarray(start)
    rec = model.sample(start, 0, sample_rng)
    states = rec[:, :2]
    ending = prune(states)
    sims = [similarity(states[j], states[j + 1]) for j in range(K - 1)]
    print(f"start {start}: ending position {ending}/{K}, adjacent sims "
          + " ".join(f"{s:.2f}" for s in sims))
    axes[0].plot(states[:ending, 0], states[:ending, 1], "-o", ms=3, label=f"start {start}")
    axes[0].plot(states[ending:, 0], states[ending:, 1], "x", color="gray", alpha=0.5)
axes[0].add_patch(plt.Circle((0.9, 0.9), 0.1, color="tab:green", alpha=0.3))
axes[0].set_xlim(0, 1)
axes[0].set_ylim(0, 1)
axes[0].set_title("generated windows (kept part solid, pruned tail x)")
axes[0].legend(fontsize=8)
axes[1].semilogy(np.convolve(losses, np.ones(100) / 100, mode="valid"))
axes[1].set_title("denoiser training loss")
fig.savefig(OUT / "03_generated_windows.png", dpi=120)
print(f"figure: {OUT / '03_generated_windows.png'}")
