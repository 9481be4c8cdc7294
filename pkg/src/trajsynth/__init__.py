"""Trajectory synthesis for replay-buffer augmentation in online RL.

A bank of fixed-length denoising diffusion models over (state, action,
reward) trajectory windows, a length-selection and pruning pipeline, a
replay buffer that mixes real and synthesized transitions, an online
adaptation loop with importance-based sample selection, and a multi-seed
experiment harness with built-in sparse-reward toy environments.
"""

from .nn import Mlp, AdamState, mlp_init, mlp_forward, mlp_grad, adam_init, adam_step
from .envs import (
    EnvSpec,
    Trajectory,
    Transition,
    PointGoal,
    Chain,
    make_env,
    make_policy,
    collect_offline,
    trajectory_to_transitions,
    save_dataset,
    load_dataset,
)
from .diffusion import NoiseSchedule, TrajDiffusionModel, q_sample
from .bank import DiffuserBank, BankTrainConfig, pad_and_slice, similarity, prune, train_bank
from .replay import AugmentedReplayBuffer
from .adapt import ImportancePool, AdaptConfig, importance_td, importance_reward, adapt_step
from .agent import QAgent, QAgentConfig
from .harness import RunConfig, run_experiment, measure_expected_length, plot_learning_curves

__all__ = [
    "Mlp",
    "AdamState",
    "mlp_init",
    "mlp_forward",
    "mlp_grad",
    "adam_init",
    "adam_step",
    "EnvSpec",
    "Trajectory",
    "Transition",
    "PointGoal",
    "Chain",
    "make_env",
    "make_policy",
    "collect_offline",
    "trajectory_to_transitions",
    "save_dataset",
    "load_dataset",
    "NoiseSchedule",
    "TrajDiffusionModel",
    "q_sample",
    "DiffuserBank",
    "BankTrainConfig",
    "pad_and_slice",
    "similarity",
    "prune",
    "train_bank",
    "AugmentedReplayBuffer",
    "ImportancePool",
    "AdaptConfig",
    "importance_td",
    "importance_reward",
    "adapt_step",
    "QAgent",
    "QAgentConfig",
    "RunConfig",
    "run_experiment",
    "measure_expected_length",
    "plot_learning_curves",
]
