"""Reference value-based agent: Q-learning with a target network.

Deliberately minimal: epsilon-greedy over a dense Q-network, squared
TD-error updates from whatever buffer it is handed. It neither sees nor
cares whether sampled transitions are synthetic; the augmentation lives
entirely inside the buffer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass
class QAgentConfig:
    gamma: float = 0.99
    hidden: tuple = (64, 64)
    lr: float = 1e-3
    batch: int = 64
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 20000
    target_sync: int = 500
    updates_per_step: int = 1


class QAgent:
    def __init__(self, state_dim: int, n_actions: int, config: QAgentConfig | None = None, rng=None):
        self.config = config if config is not None else QAgentConfig()
        self.n_actions = n_actions
        self.q = nn.mlp_init([state_dim, *self.config.hidden, n_actions], "relu", rng)
        self.target = self.q.copy()
        self.opt = nn.adam_init(self.q, lr=self.config.lr)
        self.env_steps = 0
        self.n_updates = 0

    def epsilon(self) -> float:
        c = self.config
        if c.eps_decay_steps <= 0:
            return c.eps_end
        frac = min(1.0, self.env_steps / c.eps_decay_steps)
        return c.eps_start + (c.eps_end - c.eps_start) * frac

    def q_values(self, state) -> np.ndarray:
        return nn.mlp_forward(self.q, np.asarray(state, dtype=np.float64))

    def greedy_action(self, state) -> int:
        # argmax breaks ties toward the lowest action index
        return int(np.argmax(self.q_values(state)))

    def act(self, state, rng: np.random.Generator) -> int:
        """Epsilon-greedy action; each call counts one environment step."""
        eps = self.epsilon()
        self.env_steps += 1
        if rng.random() < eps:
            return int(rng.integers(self.n_actions))
        return self.greedy_action(state)

    def update(self, buffer, rng: np.random.Generator):
        """One squared-TD-error step on a sampled batch; returns the loss.

        The target replaces only the taken action's slot, so gradients flow
        exclusively through Q(s, a). Unsampleable buffers make this a no-op.
        """
        try:
            batch = buffer.sample_batch(self.config.batch, rng)
        except ValueError:
            return None
        s = np.stack([z.s for z in batch])
        s2 = np.stack([z.s2 for z in batch])
        a = np.array([z.a for z in batch], dtype=np.int64)
        r = np.array([z.r for z in batch])
        done = np.array([float(z.done) for z in batch])

        q_next = nn.mlp_forward(self.target, s2).max(axis=1)
        y = r + self.config.gamma * q_next * (1.0 - done)
        targets = nn.mlp_forward(self.q, s)
        targets[np.arange(len(batch)), a] = y
        loss, grads = nn.mlp_grad(self.q, s, targets)
        nn.adam_step(self.q, grads, self.opt)
        self.n_updates += 1
        if self.n_updates % self.config.target_sync == 0:
            self.target = self.q.copy()
        return loss
