import json

import numpy as np
import pytest

from trajsynth.diffusion import GenerationError
from trajsynth.envs import Trajectory, Transition
from trajsynth.replay import AugmentedReplayBuffer


def mk_z(i=0, done=False):
    s = np.array([float(i), 0.0])
    return Transition(s=s, a=0, s2=s + 0.05, r=0.0, done=done)


class StubGenerator:
    """Emits a fixed-length trajectory (length n_steps => n_steps - 1 transitions)."""

    def __init__(self, n_steps, pruned=False):
        self.n_steps = n_steps
        self.pruned = pruned
        self.calls = 0

    def generate(self, state, task, rng):
        self.calls += 1
        t = self.n_steps
        states = np.asarray(state)[None, :] + 0.01 * np.arange(t)[:, None]
        return Trajectory(
            states=states,
            actions=np.zeros(t, dtype=np.int64),
            rewards=np.zeros(t),
            dones=np.zeros(t, dtype=bool),
            synthetic=True,
            pruned=self.pruned,
        )


class FailingGenerator:
    def generate(self, state, task, rng):
        raise GenerationError("boom")


class TestProbabilities:
    def test_rho_zero(self):
        buf = AugmentedReplayBuffer(0.0, 10)
        assert buf.generation_probability == 0.0

    def test_half_rho_l_ten(self):
        buf = AugmentedReplayBuffer(0.5, 10)
        assert buf.generation_probability == pytest.approx(0.1)

    def test_two_thirds_rho_l_eight(self):
        buf = AugmentedReplayBuffer(2.0 / 3.0, 8)
        assert buf.generation_probability == pytest.approx(0.25)

    def test_invalid_rho_rejected(self):
        with pytest.raises(ValueError):
            AugmentedReplayBuffer(1.0, 10)
        with pytest.raises(ValueError):
            AugmentedReplayBuffer(-0.1, 10)

    def test_default_synth_capacity_matches_ratio(self):
        buf = AugmentedReplayBuffer(0.5, 10, capacity_real=1000)
        assert buf.synth.capacity == 1000
        buf = AugmentedReplayBuffer(2.0 / 3.0, 10, capacity_real=900)
        assert buf.synth.capacity == 1800


class TestStore:
    def test_rho_zero_never_generates(self):
        buf = AugmentedReplayBuffer(0.0, 10)
        gen = StubGenerator(6)
        rng = np.random.default_rng(0)
        for i in range(500):
            buf.store(mk_z(i), gen, rng)
        assert len(buf.synth) == 0 and gen.calls == 0

    def test_forced_generation_stores_l_minus_one(self):
        # rho = 0.5, L = 1 makes the generation probability exactly 1
        buf = AugmentedReplayBuffer(0.5, 1)
        gen = StubGenerator(6)
        buf.store(mk_z(), gen, np.random.default_rng(0))
        assert len(buf.synth) == 5
        assert len(buf.real) == 1
        assert all(z.synthetic for z in buf.synth)

    def test_synthetic_transitions_chain(self):
        buf = AugmentedReplayBuffer(0.5, 1)
        buf.store(mk_z(3), StubGenerator(4), np.random.default_rng(0))
        zs = list(buf.synth)
        for a, b in zip(zs, zs[1:]):
            assert np.array_equal(a.s2, b.s)

    def test_done_only_on_last_when_pruned(self):
        buf = AugmentedReplayBuffer(0.5, 1)
        buf.store(mk_z(), StubGenerator(5, pruned=True), np.random.default_rng(0))
        flags = [z.done for z in buf.synth]
        assert flags == [False, False, False, True]
        buf2 = AugmentedReplayBuffer(0.5, 1)
        buf2.store(mk_z(), StubGenerator(5, pruned=False), np.random.default_rng(0))
        assert not any(z.done for z in buf2.synth)

    def test_generation_failure_keeps_real_store(self):
        buf = AugmentedReplayBuffer(0.5, 1)
        buf.store(mk_z(), FailingGenerator(), np.random.default_rng(0))
        assert len(buf.real) == 1
        assert len(buf.synth) == 0
        assert buf.n_failures == 1

    def test_synthetic_store_rejected(self):
        buf = AugmentedReplayBuffer(0.5, 1)
        z = mk_z()
        z.synthetic = True
        with pytest.raises(ValueError):
            buf.store(z, None, np.random.default_rng(0))

    def test_ratio_law_with_stub(self):
        # E[|D_s|] / |D_o| = rho / (1 - rho) with a stub emitting exactly L transitions
        for rho in (0.2, 0.5):
            buf = AugmentedReplayBuffer(rho, 5)
            gen = StubGenerator(6)  # 5 transitions per generation
            rng = np.random.default_rng(12)
            for i in range(20_000):
                buf.store(mk_z(i), gen, rng)
            ratio = len(buf.synth) / len(buf.real)
            assert abs(ratio - rho / (1 - rho)) / (rho / (1 - rho)) < 0.15


class TestSample:
    def build(self, rho=0.5, n_real=50, n_synth=50):
        buf = AugmentedReplayBuffer(rho, 1, capacity_real=1000, capacity_synth=1000)
        for i in range(n_real):
            buf.real.append(mk_z(i))
        if n_synth:
            gen = StubGenerator(n_synth + 1)
            buf.add_synthetic(gen.generate(np.zeros(2), 0, None))
        return buf

    def test_both_empty_rejected(self):
        buf = AugmentedReplayBuffer(0.5, 1)
        with pytest.raises(ValueError):
            buf.sample(np.random.default_rng(0))
        with pytest.raises(ValueError):
            buf.sample_batch(4, np.random.default_rng(0))

    def test_rho_zero_always_real(self):
        buf = self.build(rho=0.0)
        rng = np.random.default_rng(0)
        assert not any(buf.sample(rng).synthetic for _ in range(200))

    def test_empty_synth_falls_back_to_real(self):
        buf = self.build(rho=0.9, n_synth=0)
        rng = np.random.default_rng(0)
        assert not buf.sample(rng).synthetic

    def test_empty_real_falls_back_to_synth(self):
        buf = self.build(rho=0.2, n_real=0)
        rng = np.random.default_rng(0)
        assert buf.sample(rng).synthetic

    def test_sampling_law(self):
        buf = self.build(rho=0.5)
        rng = np.random.default_rng(3)
        n = 40_000
        frac = sum(buf.sample(rng).synthetic for _ in range(n)) / n
        assert abs(frac - 0.5) < 0.02

    def test_sample_batch_matches_law(self):
        buf = self.build(rho=0.3)
        rng = np.random.default_rng(4)
        batch = buf.sample_batch(40_000, rng)
        frac = sum(z.synthetic for z in batch) / len(batch)
        assert abs(frac - 0.3) < 0.02


class TestEvictionAndStats:
    def test_fresh_buffer_stats_zero(self):
        stats = AugmentedReplayBuffer(0.5, 10).stats()
        assert stats["do_size"] == 0 and stats["ds_size"] == 0
        assert stats["generations"] == 0 and stats["stores"] == 0

    def test_fifo_eviction_protects_separation(self):
        buf = AugmentedReplayBuffer(0.5, 1, capacity_real=10, capacity_synth=10)
        gen = StubGenerator(4)
        rng = np.random.default_rng(0)
        for i in range(100):
            buf.store(mk_z(i), gen, rng)
        assert len(buf.real) == 10
        assert len(buf.synth) == 10
        assert not any(z.synthetic for z in buf.real)
        assert all(z.synthetic for z in buf.synth)

    def test_stats_after_forced_generation(self):
        buf = AugmentedReplayBuffer(0.5, 1)
        buf.store(mk_z(), StubGenerator(6), np.random.default_rng(0))
        stats = buf.stats()
        assert stats["ds_size"] == 5
        assert stats["generations"] == 1
        assert stats["synth_added"] == 5

    def test_preload_bypasses_generation(self):
        buf = AugmentedReplayBuffer(0.5, 1)
        buf.preload([mk_z(i) for i in range(7)])
        assert len(buf.real) == 7 and buf.n_stores == 0 and len(buf.synth) == 0

    def test_dump_jsonl(self, tmp_path):
        buf = AugmentedReplayBuffer(0.5, 1)
        buf.store(mk_z(), StubGenerator(3), np.random.default_rng(0))
        p = tmp_path / "buffer.jsonl"
        buf.dump_jsonl(p)
        rows = [json.loads(line) for line in p.read_text().splitlines()]
        assert len(rows) == 3
        assert [r["synthetic"] for r in rows] == [False, True, True]
        assert set(rows[0]) == {"s", "a", "s2", "r", "done", "synthetic"}
