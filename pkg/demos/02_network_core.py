#!/usr/bin/env python3
"""The dense-network core on a toy regression: forward, gradients, Adam.

Fits sin(3x) with a two-hidden-layer net, checks the analytic gradients
against finite differences on the way, and shows the checkpoint round-trip.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from trajsynth import mlp_init, mlp_forward, mlp_grad, adam_init, adam_step
from trajsynth.nn import mlp_to_bytes, mlp_from_bytes

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

rng = np.random.default_rng(0)
net = mlp_init([1, 32, 32, 1], "tanh", rng)
opt = adam_init(net, lr=3e-3)

x = rng.uniform(-2, 2, size=(256, 1))
y = np.sin(3 * x)

# spot-check one gradient against a central difference
_, grads = mlp_grad(net, x, y)
w = net.weights[0]
h = 1e-5
orig = w[0, 0]
w[0, 0] = orig + h
lp = float(np.mean(np.sum((mlp_forward(net, x) - y) ** 2, axis=1)))
w[0, 0] = orig - h
lm = float(np.mean(np.sum((mlp_forward(net, x) - y) ** 2, axis=1)))
w[0, 0] = orig
fd = (lp - lm) / (2 * h)
print(f"analytic grad {grads[0][0,0]:+.6f} vs finite difference {fd:+.6f}")

losses = []
for step in range(3000):
    idx = rng.integers(0, len(x), size=64)
    loss, grads = mlp_grad(net, x[idx], y[idx])
    adam_step(net, grads, opt)
    losses.append(loss)
print(f"loss: {losses[0]:.3f} -> {np.mean(losses[-50:]):.5f} after {opt.step} steps")

blob = mlp_to_bytes(net)
again = mlp_from_bytes(blob)
assert mlp_to_bytes(again) == blob
print(f"checkpoint round-trip: {len(blob)} bytes, bit-exact")

grid = np.linspace(-2, 2, 200)[:, None]
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
axes[0].plot(grid, np.sin(3 * grid), label="target")
axes[0].plot(grid, mlp_forward(net, grid), label="net")
axes[0].legend()
axes[0].set_title("fit")
axes[1].semilogy(np.convolve(losses, np.ones(50) / 50, mode="valid"))
axes[1].set_title("training loss (smoothed)")
fig.savefig(OUT / "02_regression.png", dpi=120)
print(f"figure: {OUT / '02_regression.png'}")
