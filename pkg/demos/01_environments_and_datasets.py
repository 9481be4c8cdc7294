#!/usr/bin/env python3
"""Tour of the built-in sparse-reward environments and offline datasets.

Rolls the three behavior tiers on the point-goal box, prints episode
statistics, writes a JSON-lines dataset, and draws a handful of expert
paths.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from trajsynth import PointGoal, Chain, collect_offline, make_policy, save_dataset, load_dataset

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

env = PointGoal()
print(f"env: {env.spec.name}, d_s={env.spec.state_dim}, actions={env.spec.n_actions}, H={env.spec.horizon}")

# every tier on the same seed: success rate and episode length tell the story
for tier in ("random", "noisy-expert", "expert"):
    trajs = collect_offline(env, make_policy(env, tier), 50, seed=0)
    lengths = [len(t) for t in trajs]
    succ = np.mean([t.total_reward for t in trajs])
    print(f"{tier:>12}: success={succ:.2f} mean_length={np.mean(lengths):5.1f} max={max(lengths)}")

# datasets round-trip through a deterministic JSON-lines file
expert = collect_offline(env, make_policy(env, "expert"), 50, seed=0)
path = OUT / "pointgoal_expert.jsonl"
save_dataset(expert, path)
back = load_dataset(path)
print(f"wrote {path} ({len(back)} episodes, {sum(len(t) for t in back)} steps)")

# a few expert paths: straight runs toward the goal disc
fig, ax = plt.subplots(figsize=(5, 5))
for traj in expert[:12]:
    ax.plot(traj.states[:, 0], traj.states[:, 1], alpha=0.6, lw=1)
    ax.plot(*traj.states[0], "ko", ms=3)
ax.add_patch(plt.Circle((0.9, 0.9), 0.1, color="tab:green", alpha=0.3))
ax.set_xlim(0, 1)
ax.set_ylim(0, 1)
ax.set_title("expert paths into the goal disc")
fig.savefig(OUT / "01_expert_paths.png", dpi=120)
print(f"figure: {OUT / '01_expert_paths.png'}")

# the chain walk is the tabular-degenerate cousin
chain = Chain()
traj = collect_offline(chain, make_policy(chain, "expert"), 1, seed=0)[0]
print(f"chain expert: {len(traj)} steps, final reward {traj.rewards[-1]:.0f}")
