"""Replay buffer that mixes real experience with synthesized trajectories.

Two bounded FIFO stores sit behind one store/sample interface: D_o holds
real transitions, D_s synthetic ones. Storing a real transition triggers a
generation with probability rho / ((1 - rho) L), which keeps the expected
size ratio |D_s| / |D_o| at rho / (1 - rho); sampling draws from D_s with
probability rho. The consuming RL algorithm never sees the difference.
"""

from __future__ import annotations

import json

import numpy as np

from .diffusion import GenerationError
from .envs import Transition


class RingStore:
    """Fixed-capacity store with O(1) append (oldest-first eviction) and indexing."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._head = 0

    def append(self, item: Transition) -> None:
        if self.capacity == 0:
            return
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._head] = item
            self._head = (self._head + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Transition:
        return self._items[i]

    def __iter__(self):
        return iter(self._items)


class AugmentedReplayBuffer:
    """Composite buffer D = (D_s, D_o, rho, L) in front of any trajectory generator.

    The generator only needs a ``generate(state, task, rng) -> Trajectory``
    method and is passed per store() call, so the buffer itself stays a pure
    container. rho = 0 short-circuits every coin flip, making such a run
    indistinguishable from a plain replay buffer.
    """

    def __init__(
        self,
        rho: float,
        expected_length: float,
        capacity_real: int = 200_000,
        capacity_synth: int | None = None,
    ):
        if not 0.0 <= rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if expected_length < 1:
            raise ValueError("expected length L must be >= 1")
        self.rho = float(rho)
        self.expected_length = float(expected_length)
        if capacity_synth is None:
            capacity_synth = int(round(rho / (1.0 - rho) * capacity_real))
        self.real = RingStore(capacity_real)
        self.synth = RingStore(capacity_synth)
        self.n_stores = 0
        self.n_generations = 0
        self.n_synth_added = 0
        self.n_failures = 0

    @property
    def generation_probability(self) -> float:
        return self.rho / ((1.0 - self.rho) * self.expected_length)

    def preload(self, transitions) -> None:
        """Seed D_o with offline transitions without triggering generation."""
        for z in transitions:
            if z.synthetic:
                raise ValueError("preload expects real transitions")
            self.real.append(z)

    def store(self, z: Transition, diffuser=None, rng: np.random.Generator | None = None) -> None:
        """Append a real transition; maybe synthesize a trajectory from its successor.

        A failed generation is counted, not raised: the real store has
        already been committed.
        """
        if z.synthetic:
            raise ValueError("store expects a real transition")
        self.real.append(z)
        self.n_stores += 1
        p = self.generation_probability
        if diffuser is None or p <= 0.0:
            return
        if rng.random() >= p:
            return
        try:
            traj = diffuser.generate(z.s2, z.task, rng)
        except GenerationError:
            self.n_failures += 1
            return
        self.add_synthetic(traj)

    def add_synthetic(self, traj) -> None:
        """Store the l-1 chained transitions of a generated length-l trajectory.

        Only the last one is marked done, and only when the tail pruner
        fired (the cut point is read as the episode's end).
        """
        self.n_generations += 1
        t = len(traj)
        for i in range(t - 1):
            self.synth.append(
                Transition(
                    s=traj.states[i],
                    a=int(traj.actions[i]),
                    s2=traj.states[i + 1],
                    r=float(traj.rewards[i]),
                    done=bool(traj.pruned) and i == t - 2,
                    synthetic=True,
                    task=traj.task,
                )
            )
            self.n_synth_added += 1

    def sample(self, rng: np.random.Generator) -> Transition:
        """Draw one transition: from D_s with probability rho, else D_o.

        An empty store falls back to the other side; only two empty stores
        are an error.
        """
        n_r, n_s = len(self.real), len(self.synth)
        if n_r == 0 and n_s == 0:
            raise ValueError("cannot sample from an empty buffer")
        if n_s == 0 or self.rho == 0.0:
            store = self.real
        elif n_r == 0:
            store = self.synth
        else:
            store = self.synth if rng.random() < self.rho else self.real
        return store[int(rng.integers(len(store)))]

    def sample_batch(self, n: int, rng: np.random.Generator) -> list[Transition]:
        """Vectorized n-fold sample() with the same per-item distribution."""
        n_r, n_s = len(self.real), len(self.synth)
        if n_r == 0 and n_s == 0:
            raise ValueError("cannot sample from an empty buffer")
        if n_s == 0 or self.rho == 0.0:
            idx = rng.integers(n_r, size=n)
            return [self.real[int(i)] for i in idx]
        if n_r == 0:
            idx = rng.integers(n_s, size=n)
            return [self.synth[int(i)] for i in idx]
        coins = rng.random(n) < self.rho
        idx_s = rng.integers(n_s, size=n)
        idx_r = rng.integers(n_r, size=n)
        return [self.synth[int(i)] if c else self.real[int(j)] for c, i, j in zip(coins, idx_s, idx_r)]

    def stats(self) -> dict:
        n_r, n_s = len(self.real), len(self.synth)
        return {
            "do_size": n_r,
            "ds_size": n_s,
            "stores": self.n_stores,
            "generations": self.n_generations,
            "synth_added": self.n_synth_added,
            "failures": self.n_failures,
            "synth_real_ratio": (n_s / n_r) if n_r else 0.0,
        }

    def dump_jsonl(self, path) -> None:
        """Write every stored transition for offline inspection."""
        with open(path, "w") as f:
            for store in (self.real, self.synth):
                for z in store:
                    row = {
                        "s": [float(v) for v in z.s],
                        "a": int(z.a),
                        "s2": [float(v) for v in z.s2],
                        "r": float(z.r),
                        "done": bool(z.done),
                        "synthetic": bool(z.synthetic),
                    }
                    f.write(json.dumps(row) + "\n")
