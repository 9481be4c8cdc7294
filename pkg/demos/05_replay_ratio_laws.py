#!/usr/bin/env python3
"""The modified replay buffer's two probability laws, demonstrated.

With a stub generator emitting a fixed number of transitions per call, the
store-side coin keeps |D_s| / |D_o| at rho / (1 - rho), and the sample-side
coin draws synthetic transitions with frequency rho.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from trajsynth import AugmentedReplayBuffer, Trajectory, Transition

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)


class StubGenerator:
    """Emits a straight 6-record trajectory -> 5 stored transitions."""

    def generate(self, state, task, rng):
        t = 6
        states = np.asarray(state)[None, :] + 0.01 * np.arange(t)[:, None]
        return Trajectory(states=states, actions=np.zeros(t, dtype=np.int64),
                          rewards=np.zeros(t), dones=np.zeros(t, dtype=bool), synthetic=True)


def transition(i):
    s = np.array([i * 1e-4, 0.0])
    return Transition(s=s, a=0, s2=s + 0.05, r=0.0, done=False)


fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for rho in (0.2, 0.5, 2 / 3):
    buf = AugmentedReplayBuffer(rho, expected_length=5)
    gen = StubGenerator()
    rng = np.random.default_rng(0)
    ratios = []
    for i in range(30_000):
        buf.store(transition(i), gen, rng)
        if i % 300 == 299:
            ratios.append(len(buf.synth) / len(buf.real))
    target = rho / (1 - rho)
    print(f"rho={rho:.3f}: store probability {buf.generation_probability:.4f}, "
          f"final ratio {ratios[-1]:.3f} (target {target:.3f})")
    axes[0].plot(np.arange(len(ratios)) * 300, ratios, label=f"rho={rho:.2f}")
    axes[0].axhline(target, ls=":", color="gray")

    draws = 20_000
    frac = sum(buf.sample(rng).synthetic for _ in range(draws)) / draws
    print(f"          sampled synthetic fraction {frac:.3f} (target {rho:.3f})")
    axes[1].bar(f"{rho:.2f}", frac)
    axes[1].plot([f"{rho:.2f}"], [rho], "k_", ms=25)

axes[0].set_xlabel("stores")
axes[0].set_ylabel("|D_s| / |D_o|")
axes[0].legend()
axes[1].set_xlabel("rho")
axes[1].set_ylabel("synthetic sample fraction")
fig.tight_layout()
fig.savefig(OUT / "05_ratio_laws.png", dpi=120)
print(f"figure: {OUT / '05_ratio_laws.png'}")
