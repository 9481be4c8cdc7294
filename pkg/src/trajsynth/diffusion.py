"""Denoising diffusion over fixed-length trajectory windows.

A window is k per-step records [state | one-hot action | reward] flattened
to one vector. A small MLP predicts the corrupting noise from the noised
window, a timestep embedding, and a condition vector (initial state plus an
optional one-hot task id). Sampling runs the full reverse chain with fixed
per-step variance beta_i, then hard-writes the conditioning state into the
first record.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import nn
from .envs import Trajectory

TIME_EMBED_DIM = 5


class GenerationError(RuntimeError):
    """Reverse-process produced non-finite values; the sample was aborted."""


@dataclass
class NoiseSchedule:
    """Forward-process betas with cached alpha products (alpha_bar[0] = 1)."""

    betas: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or len(self.betas) < 1:
            raise ValueError("betas must be a non-empty vector")
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise ValueError("betas must lie in (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.concatenate([[1.0], np.cumprod(self.alphas)])
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")

    @property
    def n_steps(self) -> int:
        return len(self.betas)

    @classmethod
    def linear(cls, n_steps: int = 100, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, n_steps))


def q_sample(x0: np.ndarray, i, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward marginal sqrt(abar_i) x0 + sqrt(1 - abar_i) noise.

    i may be a scalar in [0, N] (0 returns x0 exactly) or a per-row vector
    for batched x0/noise.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ValueError("noise shape must match x0")
    i_arr = np.asarray(i)
    if np.any(i_arr < 0) or np.any(i_arr > schedule.n_steps):
        raise ValueError(f"step index out of range [0, {schedule.n_steps}]")
    abar = schedule.alpha_bar[i_arr]
    if i_arr.ndim == 1 and x0.ndim == 2:
        abar = abar[:, None]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def time_embedding(i, n_steps: int) -> np.ndarray:
    """i/N plus four sinusoidal features; accepts a scalar or a vector of steps."""
    u = np.asarray(i, dtype=np.float64) / n_steps
    feats = np.stack(
        [u, np.sin(2.0 * np.pi * u), np.cos(2.0 * np.pi * u), np.sin(4.0 * np.pi * u), np.cos(4.0 * np.pi * u)],
        axis=-1,
    )
    return feats


@dataclass
class NormalizedWindows:
    """Training batch already z-scored by a specific model's statistics."""

    windows: np.ndarray  # (n, window_dim)
    conds: np.ndarray  # (n, cond_dim), raw (conditions are not normalized)
    stats_token: bytes

    def __len__(self) -> int:
        return self.windows.shape[0]

    def take(self, idx) -> "NormalizedWindows":
        return NormalizedWindows(self.windows[idx], self.conds[idx], self.stats_token)


class TrajDiffusionModel:
    """One fixed-length trajectory diffuser: denoiser, schedule, normalization."""

    def __init__(
        self,
        k: int,
        state_dim: int,
        n_actions: int,
        n_tasks: int = 0,
        hidden: tuple[int, ...] = (256, 256, 256),
        schedule: NoiseSchedule | None = None,
        lr: float = 1e-3,
        rng: np.random.Generator | None = None,
    ):
        if k < 1:
            raise ValueError("window length k must be >= 1")
        self.k = k
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.n_tasks = n_tasks
        self.schedule = schedule if schedule is not None else NoiseSchedule.linear()
        self.record_dim = state_dim + n_actions + 1
        self.window_dim = k * self.record_dim
        self.cond_dim = state_dim + n_tasks
        in_dim = self.window_dim + TIME_EMBED_DIM + self.cond_dim
        self.denoiser = nn.mlp_init([in_dim, *hidden, self.window_dim], "relu", rng)
        self.opt = nn.adam_init(self.denoiser, lr=lr)
        self.mean = np.zeros(self.window_dim)
        self.std = np.ones(self.window_dim)
        # rows 0..N: embedding for every step index (row i == time_embedding(i, N))
        self._embed_table = time_embedding(np.arange(self.schedule.n_steps + 1), self.schedule.n_steps)

    # --- normalization ------------------------------------------------

    def fit_normalization(self, windows: np.ndarray) -> None:
        """Per-dimension mean/std of the training windows.

        Stds are floored so that later data a narrow pretraining corpus did
        not cover still z-scores to a few sigma instead of blowing up,
        which is what keeps fine-tuning on distribution-shifted experience
        well conditioned. One-hot action and reward slots are 0/1 by
        construction and floor at the Bernoulli scale 0.35; state slots
        floor at a quarter of their observed range (degenerating to the
        1e-6 minimum for genuinely constant dimensions).
        """
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 2 or windows.shape[1] != self.window_dim:
            raise ValueError("windows shape does not match the model layout")
        floor = np.full((self.k, self.record_dim), 0.35)
        span = windows.max(axis=0) - windows.min(axis=0)
        floor[:, : self.state_dim] = np.maximum(
            0.25 * span.reshape(self.k, self.record_dim)[:, : self.state_dim], 1e-6
        )
        self.mean = windows.mean(axis=0)
        self.std = np.maximum(windows.std(axis=0), floor.reshape(-1))

    def _stats_token(self) -> bytes:
        return hashlib.sha1(self.mean.tobytes() + self.std.tobytes()).digest()

    def normalize(self, windows: np.ndarray, conds: np.ndarray) -> NormalizedWindows:
        windows = np.asarray(windows, dtype=np.float64)
        conds = np.asarray(conds, dtype=np.float64)
        if windows.ndim != 2 or windows.shape[1] != self.window_dim:
            raise ValueError("windows shape does not match the model layout")
        if conds.shape != (windows.shape[0], self.cond_dim):
            raise ValueError("conditions shape does not match the model layout")
        return NormalizedWindows((windows - self.mean) / self.std, conds, self._stats_token())

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def condition(self, initial_state: np.ndarray, task: int = 0) -> np.ndarray:
        initial_state = np.asarray(initial_state, dtype=np.float64)
        if initial_state.shape != (self.state_dim,):
            raise ValueError("condition state dimension mismatch")
        if self.n_tasks == 0:
            return initial_state.copy()
        if not 0 <= task < self.n_tasks:
            raise ValueError(f"task id {task} out of range")
        onehot = np.zeros(self.n_tasks)
        onehot[task] = 1.0
        return np.concatenate([initial_state, onehot])

    # --- training -------------------------------------------------------

    def _denoiser_inputs(self, x: np.ndarray, i, conds: np.ndarray) -> np.ndarray:
        emb = self._embed_table[i]
        if emb.ndim == 1:
            emb = np.broadcast_to(emb, (x.shape[0], TIME_EMBED_DIM))
        if conds.ndim == 1:
            conds = np.broadcast_to(conds, (x.shape[0], conds.shape[0]))
        return np.concatenate([x, emb, conds], axis=1)

    def predict_noise(self, x: np.ndarray, i, conds: np.ndarray) -> np.ndarray:
        """Denoiser forward pass on normalized windows (batched)."""
        return nn.mlp_forward(self.denoiser, self._denoiser_inputs(x, i, conds))

    def _check_batch(self, batch: NormalizedWindows) -> None:
        if not isinstance(batch, NormalizedWindows):
            raise TypeError("train_step expects windows normalized via model.normalize()")
        if batch.stats_token != self._stats_token():
            raise ValueError("batch was normalized with different statistics")
        if batch.windows.shape[1] != self.window_dim or batch.conds.shape[1] != self.cond_dim:
            raise ValueError("batch shape does not match the model layout")
        if len(batch) == 0:
            raise ValueError("empty batch")

    def noise_prediction_loss(self, batch: NormalizedWindows, i: np.ndarray, eps: np.ndarray) -> float:
        """Loss for explicit (i, eps) draws; mean over items of ||eps - pred||^2."""
        self._check_batch(batch)
        x_i = q_sample(batch.windows, i, eps, self.schedule)
        pred = self.predict_noise(x_i, i, batch.conds)
        err = pred - eps
        return float(np.mean(np.sum(err * err, axis=1)))

    def train_step(self, batch: NormalizedWindows, rng: np.random.Generator) -> float:
        """Draw (i, eps) per item, take one optimizer step on the noise MSE."""
        self._check_batch(batch)
        b = len(batch)
        i = rng.integers(1, self.schedule.n_steps + 1, size=b)
        eps = rng.standard_normal((b, self.window_dim))
        x_i = q_sample(batch.windows, i, eps, self.schedule)
        inputs = self._denoiser_inputs(x_i, i, batch.conds)
        loss, grads = nn.mlp_grad(self.denoiser, inputs, eps)
        nn.adam_step(self.denoiser, grads, self.opt)
        return loss

    # --- sampling -------------------------------------------------------

    def _reverse_chain(self, x: np.ndarray, conds: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        sched = self.schedule
        for i in range(sched.n_steps, 0, -1):
            eps_hat = self.predict_noise(x, i, conds)
            beta = sched.betas[i - 1]
            alpha = sched.alphas[i - 1]
            mean = (x - beta / np.sqrt(1.0 - sched.alpha_bar[i]) * eps_hat) / np.sqrt(alpha)
            if i > 1:
                x = mean + np.sqrt(beta) * rng.standard_normal(x.shape)
            else:
                x = mean
            if not np.isfinite(x).all():
                raise GenerationError(f"non-finite values at reverse step {i}")
        return x

    def _postprocess(self, flat: np.ndarray, initial_state: np.ndarray) -> np.ndarray:
        """Denormalized flat window -> (k, record_dim) with hard constraints."""
        rec = flat.reshape(self.k, self.record_dim)
        d_s, d_a = self.state_dim, self.n_actions
        rec[0, :d_s] = initial_state
        acts = np.argmax(rec[:, d_s : d_s + d_a], axis=1)
        rec[:, d_s : d_s + d_a] = 0.0
        rec[np.arange(self.k), d_s + acts] = 1.0
        rec[:, -1] = np.clip(rec[:, -1], 0.0, 1.0)
        return rec

    def sample(self, initial_state: np.ndarray, task: int = 0, rng: np.random.Generator | None = None) -> np.ndarray:
        """Full reverse chain for one condition; returns a (k, record_dim) array.

        The first record's state slots equal initial_state exactly; action
        slots are exact one-hots; rewards are clamped to [0, 1].
        """
        if rng is None:
            rng = np.random.default_rng()
        initial_state = np.asarray(initial_state, dtype=np.float64)
        cond = self.condition(initial_state, task)
        x = rng.standard_normal((1, self.window_dim))
        x = self._reverse_chain(x, cond[None, :], rng)
        return self._postprocess(self.denormalize(x[0]), initial_state)

    def sample_batch(self, initial_states: np.ndarray, tasks=None, rng: np.random.Generator | None = None) -> np.ndarray:
        """Vectorized sampler for many conditions at once; returns (B, k, record_dim)."""
        if rng is None:
            rng = np.random.default_rng()
        initial_states = np.atleast_2d(np.asarray(initial_states, dtype=np.float64))
        b = initial_states.shape[0]
        if tasks is None:
            tasks = [0] * b
        conds = np.stack([self.condition(s, t) for s, t in zip(initial_states, tasks)])
        x = rng.standard_normal((b, self.window_dim))
        x = self._reverse_chain(x, conds, rng)
        out = np.empty((b, self.k, self.record_dim))
        for j in range(b):
            out[j] = self._postprocess(self.denormalize(x[j]), initial_states[j])
        return out

    def decode(self, records: np.ndarray, length: int | None = None, task: int = 0, pruned: bool = False) -> Trajectory:
        """Turn the first `length` records of a sampled window into a Trajectory."""
        length = self.k if length is None else length
        rec = records[:length]
        d_s, d_a = self.state_dim, self.n_actions
        return Trajectory(
            states=rec[:, :d_s].copy(),
            actions=np.argmax(rec[:, d_s : d_s + d_a], axis=1).astype(np.int64),
            rewards=rec[:, -1].copy(),
            dones=np.zeros(length, dtype=bool),
            task=task,
            synthetic=True,
            pruned=pruned,
        )


# --- checkpointing ----------------------------------------------------


def model_to_bytes(model: TrajDiffusionModel) -> bytes:
    parts = [
        nn.header(nn.KIND_DIFFUSION),
        nn.pack_blob(nn.mlp_to_bytes(model.denoiser)),
        nn.pack_u32(model.schedule.n_steps),
        nn.pack_floats(model.schedule.betas),
        nn.pack_u32(model.k),
        nn.pack_u32(model.state_dim),
        nn.pack_u32(model.n_actions),
        nn.pack_u32(model.n_tasks),
        nn.pack_floats(model.mean),
        nn.pack_floats(model.std),
    ]
    return b"".join(parts)


def model_from_bytes(data: bytes) -> TrajDiffusionModel:
    r = nn.ByteReader(data)
    read = _model_from_reader(r)
    return read


def _model_from_reader(r: nn.ByteReader) -> TrajDiffusionModel:
    nn.read_header(r, nn.KIND_DIFFUSION)
    denoiser = nn.mlp_from_bytes(r.blob())
    n_steps = r.u32()
    betas = r.floats(n_steps)
    k = r.u32()
    d_s = r.u32()
    d_a = r.u32()
    n_tasks = r.u32()
    model = TrajDiffusionModel.__new__(TrajDiffusionModel)
    model.k = k
    model.state_dim = d_s
    model.n_actions = d_a
    model.n_tasks = n_tasks
    model.schedule = NoiseSchedule(betas)
    model.record_dim = d_s + d_a + 1
    model.window_dim = k * model.record_dim
    model.cond_dim = d_s + n_tasks
    model.denoiser = denoiser
    model.opt = nn.adam_init(denoiser)
    model.mean = r.floats(model.window_dim)
    model.std = r.floats(model.window_dim)
    model._embed_table = time_embedding(np.arange(n_steps + 1), n_steps)
    return model
