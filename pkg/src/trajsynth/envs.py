"""Sparse-reward toy environments, behavior policies, and offline datasets.

Two built-in tasks stand in for large offline RL benchmarks: a 2-d
point-to-goal box with discrete moves, and a one-hot chain walk. Both pay a
0/1 reward on reaching the goal and truncate at a fixed horizon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class EnvSpec:
    name: str
    state_dim: int
    n_actions: int
    horizon: int
    goal_desc: str
    reward_kind: str = "sparse01"
    gamma: float = 0.99


@dataclass
class Trajectory:
    """One episode (real or generated) as aligned per-step records."""

    states: np.ndarray  # (t, d_s)
    actions: np.ndarray  # (t,) int action ids
    rewards: np.ndarray  # (t,)
    dones: np.ndarray  # (t,) bool
    task: int = 0
    synthetic: bool = False
    pruned: bool = False  # generation metadata: the tail pruner cut this one

    def __post_init__(self):
        t = len(self.states)
        if not (t >= 1 and len(self.actions) == t and len(self.rewards) == t and len(self.dones) == t):
            raise ValueError("states, actions, rewards, dones must share length >= 1")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))


@dataclass
class Transition:
    """Replay-buffer unit. ep_id/t locate the source episode for adaptation."""

    s: np.ndarray
    a: int
    s2: np.ndarray
    r: float
    done: bool
    synthetic: bool = False
    task: int = 0
    ep_id: int = -1
    t: int = -1


class PointGoal:
    """2-d box in [0,1]^2 with four axis moves and a goal disc.

    Each move shifts the state by 0.05 along one axis plus Gaussian noise,
    clamped to the box. Reward 1 (and termination) when the realized next
    state lands within ``goal_radius`` of the goal; episodes also end at the
    horizon.
    """

    DELTAS = np.array([[0.05, 0.0], [-0.05, 0.0], [0.0, 0.05], [0.0, -0.05]])

    def __init__(self, goal=(0.9, 0.9), noise: float = 0.005, horizon: int = 60, goal_radius: float = 0.1):
        self.goal = np.asarray(goal, dtype=np.float64)
        self.noise = float(noise)
        self.goal_radius = float(goal_radius)
        self.spec = EnvSpec("pointgoal", 2, 4, horizon, f"disc of radius {goal_radius} at {tuple(goal)}")
        self._state: np.ndarray | None = None
        self._steps = 0
        self._rng: np.random.Generator | None = None

    def in_goal(self, state: np.ndarray) -> bool:
        return float(np.linalg.norm(state - self.goal)) < self.goal_radius

    def dynamics(self, state: np.ndarray, action: int, rng: np.random.Generator) -> np.ndarray:
        """Pure transition function; draws one noise vector from rng."""
        if not 0 <= action < 4:
            raise ValueError(f"invalid action {action}")
        noise = rng.normal(0.0, self.noise, size=2) if self.noise > 0 else np.zeros(2)
        return np.clip(state + self.DELTAS[action] + noise, 0.0, 1.0)

    def reset(self, seed) -> np.ndarray:
        """Start uniformly in the box, rejected until outside the goal disc."""
        self._rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        while True:
            state = self._rng.uniform(0.0, 1.0, size=2)
            if not self.in_goal(state):
                break
        self._state = state
        self._steps = 0
        return state.copy()

    def step(self, action: int):
        if self._state is None:
            raise RuntimeError("reset() must be called before step()")
        nxt = self.dynamics(self._state, action, self._rng)
        self._steps += 1
        reached = self.in_goal(nxt)
        reward = 1.0 if reached else 0.0
        done = reached or self._steps >= self.spec.horizon
        self._state = nxt
        return nxt.copy(), reward, done

    def expert_action(self, state: np.ndarray) -> int:
        """Greedy move along the axis with the largest gap to the goal."""
        gap = self.goal - state
        if abs(gap[0]) >= abs(gap[1]):
            return 0 if gap[0] >= 0 else 1
        return 2 if gap[1] >= 0 else 3


class Chain:
    """Walk right along a one-hot chain; reward 1 on reaching the last cell."""

    def __init__(self, n_states: int = 20, horizon: int = 40):
        self.n_states = n_states
        self.spec = EnvSpec("chain", n_states, 2, horizon, f"terminal cell {n_states - 1}")
        self._index = 0
        self._steps = 0
        self._rng: np.random.Generator | None = None

    def _one_hot(self, index: int) -> np.ndarray:
        v = np.zeros(self.n_states)
        v[index] = 1.0
        return v

    def in_goal(self, state: np.ndarray) -> bool:
        return int(np.argmax(state)) == self.n_states - 1

    def dynamics(self, state: np.ndarray, action: int, rng: np.random.Generator) -> np.ndarray:
        if action not in (0, 1):
            raise ValueError(f"invalid action {action}")
        index = int(np.argmax(state))
        index = min(index + 1, self.n_states - 1) if action == 1 else max(index - 1, 0)
        return self._one_hot(index)

    def reset(self, seed) -> np.ndarray:
        self._rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self._index = 0
        self._steps = 0
        return self._one_hot(0)

    def step(self, action: int):
        nxt = self.dynamics(self._one_hot(self._index), action, self._rng)
        self._index = int(np.argmax(nxt))
        self._steps += 1
        reached = self._index == self.n_states - 1
        reward = 1.0 if reached else 0.0
        done = reached or self._steps >= self.spec.horizon
        return nxt, reward, done

    def expert_action(self, state: np.ndarray) -> int:
        return 1


def make_env(name: str, **overrides):
    if name == "pointgoal":
        return PointGoal(**overrides)
    if name == "chain":
        return Chain(**overrides)
    raise ValueError(f"unknown environment {name!r}")


class RandomPolicy:
    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def act(self, state, rng: np.random.Generator) -> int:
        return int(rng.integers(self.n_actions))


class ExpertPolicy:
    def __init__(self, env):
        self.env = env

    def act(self, state, rng: np.random.Generator) -> int:
        return self.env.expert_action(state)


class NoisyExpertPolicy:
    """Expert action, replaced by a uniformly random one with probability flip_prob."""

    def __init__(self, env, flip_prob: float = 0.3):
        self.env = env
        self.flip_prob = flip_prob

    def act(self, state, rng: np.random.Generator) -> int:
        if rng.random() < self.flip_prob:
            return int(rng.integers(self.env.spec.n_actions))
        return self.env.expert_action(state)


POLICY_TIERS = ("random", "noisy-expert", "expert")


def make_policy(env, tier: str, flip_prob: float = 0.3):
    if tier == "random":
        return RandomPolicy(env.spec.n_actions)
    if tier == "expert":
        return ExpertPolicy(env)
    if tier == "noisy-expert":
        return NoisyExpertPolicy(env, flip_prob)
    raise ValueError(f"unknown policy tier {tier!r}; choose from {POLICY_TIERS}")


def rollout(env, policy, rng: np.random.Generator, task: int = 0) -> Trajectory:
    """Run one episode and record it as aligned (state, action, reward) triples."""
    states, actions, rewards, dones = [], [], [], []
    state = env.reset(rng)
    done = False
    while not done:
        a = policy.act(state, rng)
        nxt, r, done = env.step(a)
        states.append(state)
        actions.append(a)
        rewards.append(r)
        dones.append(done)
        state = nxt
    return Trajectory(
        states=np.asarray(states, dtype=np.float64),
        actions=np.asarray(actions, dtype=np.int64),
        rewards=np.asarray(rewards, dtype=np.float64),
        dones=np.asarray(dones, dtype=bool),
        task=task,
    )


def collect_offline(env, policy, n_episodes: int, seed: int) -> list[Trajectory]:
    """Roll the policy for n_episodes; fully reproducible from the seed."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    return [rollout(env, policy, rng) for _ in range(n_episodes)]


def trajectory_to_transitions(traj: Trajectory, ep_id: int = -1) -> list[Transition]:
    """Expand an episode into replay transitions.

    Consecutive records chain as (s_i, a_i, s_{i+1}, r_i). The final record
    has no stored successor, so it becomes a terminal transition whose
    successor is its own state; done=True means the Bellman target never
    reads it.
    """
    t = len(traj)
    out = []
    for i in range(t):
        s2 = traj.states[i + 1] if i + 1 < t else traj.states[i]
        done = bool(traj.dones[i]) or i == t - 1
        out.append(
            Transition(
                s=np.asarray(traj.states[i], dtype=np.float64),
                a=int(traj.actions[i]),
                s2=np.asarray(s2, dtype=np.float64),
                r=float(traj.rewards[i]),
                done=done,
                synthetic=traj.synthetic,
                task=traj.task,
                ep_id=ep_id,
                t=i,
            )
        )
    return out


def save_dataset(trajs: list[Trajectory], path) -> None:
    """Write one JSON object per line with fields states, actions, rewards, task."""
    with open(path, "w") as f:
        for traj in trajs:
            row = {
                "states": [[float(v) for v in s] for s in traj.states],
                "actions": [int(a) for a in traj.actions],
                "rewards": [float(r) for r in traj.rewards],
                "task": int(traj.task),
            }
            f.write(json.dumps(row) + "\n")


def load_dataset(path) -> list[Trajectory]:
    """Read a JSON-lines dataset; episodes are complete, so only the last step is done."""
    trajs = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        t = len(row["states"])
        dones = np.zeros(t, dtype=bool)
        dones[-1] = True
        trajs.append(
            Trajectory(
                states=np.asarray(row["states"], dtype=np.float64),
                actions=np.asarray(row["actions"], dtype=np.int64),
                rewards=np.asarray(row["rewards"], dtype=np.float64),
                dones=dones,
                task=int(row.get("task", 0)),
            )
        )
    if not trajs:
        raise ValueError(f"no trajectories in {path}")
    return trajs
