import numpy as np
import pytest

from trajsynth.bank import BankTrainConfig, train_bank
from trajsynth.envs import PointGoal, collect_offline, make_policy


@pytest.fixture(scope="session")
def pointgoal_setup():
    """A small pretrained bank on PointGoal expert data, shared across tests."""
    env = PointGoal()
    trajs = collect_offline(env, make_policy(env, "expert"), 80, seed=5)
    cfg = BankTrainConfig(
        train_steps=2500,
        batch=64,
        hidden=(96, 96),
        diffusion_steps=50,
        estimator_steps=1500,
        n_actions=env.spec.n_actions,
    )
    bank = train_bank(trajs, [5, 10, 15], cfg, np.random.default_rng(0))
    return env, trajs, bank
