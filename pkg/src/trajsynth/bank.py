"""Bank of fixed-length trajectory diffusers with coarse-to-precise length control.

Generation proceeds in two stages: a small regressor estimates the length a
trajectory from the current state should have and rounds it up to the
nearest preset model length (coarse); after sampling, a non-parametric
pruner cuts the duplicated tail that the padded training corpus teaches the
models to emit (precise). A frozen copy of the pretrained bank is kept
alongside the adapted one and used for a configurable fraction of
generations.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .diffusion import NoiseSchedule, TrajDiffusionModel, model_to_bytes, _model_from_reader
from .envs import Trajectory

EPS_PRUNE = 0.05


def traj_records(traj: Trajectory, n_actions: int) -> np.ndarray:
    """Per-step [state | one-hot action | reward] matrix of shape (t, d)."""
    t = len(traj)
    d_s = traj.states.shape[1]
    rec = np.zeros((t, d_s + n_actions + 1))
    rec[:, :d_s] = traj.states
    rec[np.arange(t), d_s + traj.actions] = 1.0
    rec[:, -1] = traj.rewards
    return rec


def task_one_hot(task: int, n_tasks: int) -> np.ndarray:
    if n_tasks == 0:
        return np.empty(0)
    if not 0 <= task < n_tasks:
        raise ValueError(f"task id {task} out of range")
    v = np.zeros(n_tasks)
    v[task] = 1.0
    return v


def pad_and_slice(traj: Trajectory, k: int, n_actions: int, n_tasks: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Duplicate-pad an episode and slice every window of length k.

    The record sequence is extended to t+k rows by repeating the final
    record with its reward zeroed (padding emulates a terminated episode),
    then all t windows with start positions 1..t are emitted. Returns
    (windows, conditions): (t, k*d) flattened windows and (t, d_s+n_tasks)
    conditions holding each window's first state plus the task one-hot.
    """
    if k < 1:
        raise ValueError("window length k must be >= 1")
    rec = traj_records(traj, n_actions)
    t, d = rec.shape
    pad = rec[-1].copy()
    pad[-1] = 0.0
    padded = np.vstack([rec, np.tile(pad, (k, 1))])
    idx = np.arange(t)[:, None] + np.arange(k)[None, :]
    windows = padded[idx].reshape(t, k * d)
    d_s = traj.states.shape[1]
    conds = np.concatenate(
        [traj.states, np.tile(task_one_hot(traj.task, n_tasks), (t, 1))], axis=1
    )
    return windows, conds


def similarity(s: np.ndarray, s2: np.ndarray) -> float:
    """exp(-||s - s2||_2 / d); 1 exactly iff the states are identical."""
    s = np.asarray(s, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if s.shape != s2.shape:
        raise ValueError("states must have equal dimensions")
    return float(np.exp(-np.linalg.norm(s - s2) / s.size))


def prune_similarities(sims, eps_prune: float = EPS_PRUNE) -> int:
    """Ending position from an adjacent-state similarity sequence.

    For a k-state window, sims holds sim(s_j, s_{j+1}) for j = 1..k-1. The
    prefix average over sim_1..sim_i and the suffix average over
    sim(s_{j-1}, s_j) for j = i..k are compared at every interior position;
    the largest gap marks the ending index. Ties go to the largest index,
    and a gap below eps_prune means nothing is cut.

    Accumulation is plain left-to-right float addition so the result is
    reproducible against a literal evaluation of the formulas.
    """
    vals = [float(v) for v in sims]
    k = len(vals) + 1
    if k < 3:
        return k
    best_diff = -1.0
    best_i = k
    for i in range(2, k):
        pre = sum(vals[0:i]) / i
        suf = sum(vals[i - 2 : k - 1]) / (k - i + 1)
        d = abs(pre - suf)
        if d >= best_diff:
            best_diff = d
            best_i = i
    if best_diff < eps_prune:
        return k
    return best_i


def prune(states: np.ndarray, eps_prune: float = EPS_PRUNE) -> int:
    """Ending position for a window of states; k < 3 windows pass through."""
    states = np.asarray(states, dtype=np.float64)
    k = states.shape[0]
    if k < 3:
        return k
    sims = [similarity(states[j], states[j + 1]) for j in range(k - 1)]
    return prune_similarities(sims, eps_prune)


def round_up_to_preset(l_hat: float, presets: list[int]) -> int:
    """Smallest preset >= l_hat (boundary inclusive), clamped to the largest."""
    for k in presets:
        if k >= l_hat:
            return k
    return presets[-1]


def estimator_dataset(trajs: list[Trajectory], n_tasks: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """(state, task) inputs and remaining-length targets over whole episodes.

    A state at position t of a length-T episode has T - t + 1 steps left,
    counting its own frame.
    """
    xs, ys = [], []
    for traj in trajs:
        t = len(traj)
        onehot = task_one_hot(traj.task, n_tasks)
        for i in range(t):
            xs.append(np.concatenate([traj.states[i], onehot]))
            ys.append([float(t - i)])
    return np.asarray(xs), np.asarray(ys)


@dataclass
class BankTrainConfig:
    train_steps: int = 20000
    batch: int = 64
    hidden: tuple = (256, 256, 256)
    diffusion_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    lr: float = 1e-3
    estimator_hidden: tuple = (64, 64)
    estimator_steps: int = 4000
    estimator_lr: float = 1e-3
    n_actions: int | None = None  # inferred from the data when None
    n_tasks: int = 0
    p_orig: float = 0.25


class DiffuserBank:
    """M trained fixed-length diffusers plus the length estimator.

    After pretraining the bank keeps a frozen deep copy of itself; each
    generation uses the frozen copy with probability p_orig, shielding the
    pretrained behavior from drift under online adaptation.
    """

    def __init__(
        self,
        presets: list[int],
        models: list[TrajDiffusionModel],
        estimator: nn.Mlp,
        estimator_opt: nn.AdamState,
        p_orig: float = 0.25,
        n_tasks: int = 0,
    ):
        if len(presets) < 1 or len(presets) != len(models):
            raise ValueError("need one model per preset length")
        if any(b <= a for a, b in zip(presets, presets[1:])):
            raise ValueError("preset lengths must be strictly increasing")
        if not 0.0 <= p_orig <= 1.0:
            raise ValueError("p_orig must lie in [0, 1]")
        self.presets = list(presets)
        self.models = list(models)
        self.estimator = estimator
        self.estimator_opt = estimator_opt
        self.p_orig = p_orig
        self.n_tasks = n_tasks
        self.frozen: DiffuserBank | None = None

    @property
    def state_dim(self) -> int:
        return self.models[0].state_dim

    @property
    def n_actions(self) -> int:
        return self.models[0].n_actions

    def model_for(self, k: int) -> TrajDiffusionModel:
        return self.models[self.presets.index(k)]

    def freeze(self) -> None:
        """Snapshot the current bank as the immutable original copy."""
        self.frozen = None
        frozen = copy.deepcopy(self)
        self.frozen = frozen

    def estimate_length(self, state: np.ndarray, task: int = 0) -> int:
        """Predict the remaining length and round it up to the nearest preset."""
        inp = np.concatenate([np.asarray(state, dtype=np.float64), task_one_hot(task, self.n_tasks)])
        raw = float(nn.mlp_forward(self.estimator, inp)[0])
        return round_up_to_preset(max(1.0, raw), self.presets)

    def generate(self, initial_state: np.ndarray, task: int = 0, rng: np.random.Generator | None = None) -> Trajectory:
        """Synthesize one trajectory starting exactly at initial_state.

        Picks the frozen copy with probability p_orig, selects the preset
        via the length estimator, samples that model, prunes the tail, and
        decodes the kept records. The result is flagged synthetic, with
        `pruned` recording whether the tail cut fired.
        """
        if rng is None:
            rng = np.random.default_rng()
        src: DiffuserBank = self
        if self.frozen is not None and rng.random() < self.p_orig:
            src = self.frozen
        k_star = src.estimate_length(initial_state, task)
        model = src.model_for(k_star)
        records = model.sample(initial_state, task, rng)
        length = prune(records[:, : model.state_dim])
        return model.decode(records, length, task, pruned=length < k_star)


def train_bank(
    trajs: list[Trajectory],
    lengths: list[int],
    config: BankTrainConfig | None = None,
    rng: np.random.Generator | None = None,
) -> DiffuserBank:
    """Pretrain one diffuser per preset length plus the length estimator.

    Each model trains on the duplicate-padded window corpus of every
    episode; the estimator regresses remaining length from (state, task).
    The returned bank is frozen, so its original copy is locked in.
    """
    if not trajs:
        raise ValueError("offline dataset is empty")
    if config is None:
        config = BankTrainConfig()
    if rng is None:
        rng = np.random.default_rng()
    lengths = sorted(int(k) for k in lengths)
    d_s = trajs[0].states.shape[1]
    n_actions = config.n_actions
    if n_actions is None:
        n_actions = int(max(int(t.actions.max()) for t in trajs)) + 1

    models = []
    for k in lengths:
        model = TrajDiffusionModel(
            k,
            d_s,
            n_actions,
            n_tasks=config.n_tasks,
            hidden=tuple(config.hidden),
            schedule=NoiseSchedule.linear(config.diffusion_steps, config.beta_start, config.beta_end),
            lr=config.lr,
            rng=rng,
        )
        parts = [pad_and_slice(t, k, n_actions, config.n_tasks) for t in trajs]
        windows = np.vstack([p[0] for p in parts])
        conds = np.vstack([p[1] for p in parts])
        model.fit_normalization(windows)
        corpus = model.normalize(windows, conds)
        n = len(corpus)
        for _ in range(config.train_steps):
            idx = rng.integers(0, n, size=min(config.batch, n))
            model.train_step(corpus.take(idx), rng)
        models.append(model)

    est_x, est_y = estimator_dataset(trajs, config.n_tasks)
    estimator = nn.mlp_init([d_s + config.n_tasks, *config.estimator_hidden, 1], "relu", rng)
    est_opt = nn.adam_init(estimator, lr=config.estimator_lr)
    n = est_x.shape[0]
    for _ in range(config.estimator_steps):
        idx = rng.integers(0, n, size=min(config.batch, n))
        _, grads = nn.mlp_grad(estimator, est_x[idx], est_y[idx])
        nn.adam_step(estimator, grads, est_opt)

    bank = DiffuserBank(lengths, models, estimator, est_opt, config.p_orig, config.n_tasks)
    bank.freeze()
    return bank


# --- checkpointing ----------------------------------------------------


def bank_to_bytes(bank: DiffuserBank) -> bytes:
    parts = [nn.header(nn.KIND_BANK), nn.pack_u32(len(bank.models))]
    for model in bank.models:
        parts.append(nn.pack_blob(model_to_bytes(model)))
    parts.append(nn.pack_blob(nn.mlp_to_bytes(bank.estimator)))
    for k in bank.presets:
        parts.append(nn.pack_u32(k))
    parts.append(nn.pack_f64(bank.p_orig))
    parts.append(nn.pack_u32(bank.n_tasks))
    return b"".join(parts)


def bank_from_bytes(data: bytes) -> DiffuserBank:
    """Restore a bank checkpoint; the loaded state becomes the frozen copy too."""
    r = nn.ByteReader(data)
    nn.read_header(r, nn.KIND_BANK)
    m = r.u32()
    models = []
    for _ in range(m):
        models.append(_model_from_reader(nn.ByteReader(r.blob())))
    estimator = nn.mlp_from_bytes(r.blob())
    presets = [r.u32() for _ in range(m)]
    p_orig = r.f64()
    n_tasks = r.u32()
    bank = DiffuserBank(presets, models, estimator, nn.adam_init(estimator), p_orig, n_tasks)
    bank.freeze()
    return bank
