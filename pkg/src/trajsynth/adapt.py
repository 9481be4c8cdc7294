"""Online adaptation: importance scoring, bounded pick-up pools, fine-tuning.

Real transitions are scored by one of two indicators and collected in a
bounded pool. Periodically the top entries are expanded back into their
source episodes, windows around them are rebuilt, and every bank model
(plus the length estimator) is fine-tuned on that corpus. The bank's frozen
copy is never touched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from .bank import DiffuserBank, estimator_dataset, pad_and_slice
from .envs import Trajectory, Transition


def importance_td(z: Transition, q_values, gamma: float = 0.99) -> float:
    """|r + gamma max_a' Q(s', a') - Q(s, a)|, with no bootstrap on terminals."""
    boot = 0.0 if z.done else gamma * float(np.max(q_values(z.s2)))
    return abs(float(z.r) + boot - float(q_values(z.s)[z.a]))


def importance_td_batch(transitions, q_values, gamma: float = 0.99) -> np.ndarray:
    """Vectorized importance_td over a list of transitions (two Q forwards)."""
    if not transitions:
        return np.empty(0)
    s = np.stack([z.s for z in transitions])
    s2 = np.stack([z.s2 for z in transitions])
    a = np.array([z.a for z in transitions], dtype=np.int64)
    r = np.array([z.r for z in transitions])
    live = np.array([0.0 if z.done else 1.0 for z in transitions])
    boot = gamma * np.max(q_values(s2), axis=1) * live
    q_sa = q_values(s)[np.arange(len(transitions)), a]
    return np.abs(r + boot - q_sa)


def importance_reward(traj: Trajectory) -> float:
    """Total reward collected over the whole episode."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    return float(np.sum(traj.rewards))


@dataclass
class PoolEntry:
    item: Transition
    score: float
    uses: int = 0


class ImportancePool:
    """Bounded max-pool of scored transitions feeding diffuser fine-tuning.

    td_error entries are re-scored against the live Q-function whenever the
    pool is updated or selected from, so retention always reflects current
    importance. reward entries keep their static episode score; they are
    instead rotated out by the post-adaptation random drop and a cap on how
    many adaptations a single entry may contribute to.
    """

    def __init__(
        self,
        capacity: int,
        indicator: str = "td_error",
        scorer=None,
        drop_prob: float = 0.2,
        usage_cap: int = 3,
    ):
        if indicator not in ("td_error", "reward"):
            raise ValueError(f"unknown indicator {indicator!r}")
        if indicator == "td_error" and scorer is None:
            raise ValueError("td_error pool needs a scorer bound to the live Q-function")
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.indicator = indicator
        self.scorer = scorer
        self.drop_prob = drop_prob
        self.usage_cap = usage_cap
        self.entries: list[PoolEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def _rescore(self) -> None:
        if not self.entries:
            return
        scores = self.scorer([e.item for e in self.entries])
        for e, s in zip(self.entries, scores):
            e.score = float(s)

    def _retain_top(self) -> None:
        # stable sort: ties keep insertion order
        self.entries.sort(key=lambda e: -e.score)
        del self.entries[self.capacity :]

    def update(self, transitions, scores=None) -> None:
        """Insert new items and evict the lowest-scored beyond capacity.

        For td_error pools the retained entries are re-scored first and the
        new items go through the pool's scorer (a callable mapping a list of
        transitions to an array of scores); reward pools require explicit
        static scores (the episode's total reward).
        """
        transitions = list(transitions)
        if self.indicator == "td_error":
            self._rescore()
            new_scores = self.scorer(transitions) if transitions else []
            new = [PoolEntry(z, float(s)) for z, s in zip(transitions, new_scores)]
        else:
            if scores is None:
                raise ValueError("reward pool update needs static scores")
            new = [PoolEntry(z, float(s)) for z, s in zip(transitions, scores)]
        self.entries.extend(new)
        self._retain_top()

    def select(self, m: int) -> list[PoolEntry]:
        """Top-m entries by current score; their usage counters increment."""
        if self.indicator == "td_error":
            self._rescore()
        ranked = sorted(self.entries, key=lambda e: -e.score)[:m]
        for e in ranked:
            e.uses += 1
        return ranked

    def post_adaptation(self, rng: np.random.Generator) -> None:
        """Reward-pool rotation: enforce the usage cap, then random drops."""
        if self.indicator != "reward":
            return
        kept = []
        for e in self.entries:
            if e.uses >= self.usage_cap:
                continue
            if self.drop_prob > 0.0 and rng.random() < self.drop_prob:
                continue
            kept.append(e)
        self.entries = kept


@dataclass
class AdaptConfig:
    period: int = 2500  # env steps between adaptations
    fine_tune_steps: int = 200  # per model (and for the estimator)
    fine_tune_lr: float = 1e-4
    select_m: int = 500
    batch: int = 64


def _window_rows(traj: Trajectory, steps: set[int], k: int) -> list[int]:
    """Start rows of the k-windows that contain any of the selected steps."""
    t = len(traj)
    rows: set[int] = set()
    for step in steps:
        lo = max(0, step - k + 1)
        hi = min(t - 1, step)
        rows.update(range(lo, hi + 1))
    return sorted(rows)


def adapt_step(
    bank: DiffuserBank,
    pool: ImportancePool,
    episodes: dict[int, Trajectory],
    config: AdaptConfig,
    rng: np.random.Generator,
) -> dict | None:
    """Fine-tune every bank model and the estimator on the selected samples.

    Selected transitions are expanded, via their episode id and step index,
    to the windows of their source episodes that contain them. Returns a
    log event with selection quantiles and before/after fine-tune loss, or
    None when the pool is empty.
    """
    if len(pool) == 0:
        warnings.warn("importance pool is empty; adaptation skipped", RuntimeWarning)
        return None
    selected = pool.select(config.select_m)
    by_episode: dict[int, set[int]] = {}
    for e in selected:
        if e.item.ep_id in episodes:
            by_episode.setdefault(e.item.ep_id, set()).add(e.item.t)
    if not by_episode:
        warnings.warn("no selected transitions had a known source episode", RuntimeWarning)
        return None

    scores = np.array([e.score for e in selected])
    head_losses: list[float] = []
    tail_losses: list[float] = []
    for k, model in zip(bank.presets, bank.models):
        blocks_w, blocks_c = [], []
        for ep_id, steps in by_episode.items():
            traj = episodes[ep_id]
            rows = _window_rows(traj, steps, k)
            windows, conds = pad_and_slice(traj, k, model.n_actions, bank.n_tasks)
            blocks_w.append(windows[rows])
            blocks_c.append(conds[rows])
        corpus = model.normalize(np.vstack(blocks_w), np.vstack(blocks_c))
        n = len(corpus)
        old_lr = model.opt.lr
        model.opt.lr = config.fine_tune_lr
        losses = []
        for _ in range(config.fine_tune_steps):
            idx = rng.integers(0, n, size=min(config.batch, n))
            losses.append(model.train_step(corpus.take(idx), rng))
        model.opt.lr = old_lr
        head = max(1, len(losses) // 10)
        head_losses.extend(losses[:head])
        tail_losses.extend(losses[-head:])

    est_x, est_y = estimator_dataset([episodes[i] for i in sorted(by_episode)], bank.n_tasks)
    old_lr = bank.estimator_opt.lr
    bank.estimator_opt.lr = config.fine_tune_lr
    n = est_x.shape[0]
    for _ in range(config.fine_tune_steps):
        idx = rng.integers(0, n, size=min(config.batch, n))
        _, grads = nn.mlp_grad(bank.estimator, est_x[idx], est_y[idx])
        nn.adam_step(bank.estimator, grads, bank.estimator_opt)
    bank.estimator_opt.lr = old_lr

    pool.post_adaptation(rng)
    return {
        "pool_size": len(pool),
        "n_selected": len(selected),
        "n_episodes": len(by_episode),
        "score_p25": float(np.percentile(scores, 25)),
        "score_p50": float(np.percentile(scores, 50)),
        "score_p75": float(np.percentile(scores, 75)),
        "loss_before": float(np.median(head_losses)),
        "loss_after": float(np.median(tail_losses)),
    }
