import numpy as np
import pytest

from trajsynth.nn import (
    AdamState,
    Mlp,
    adam_init,
    adam_step,
    mlp_forward,
    mlp_from_bytes,
    mlp_grad,
    mlp_init,
    mlp_to_bytes,
)


def batch_loss(net, x, y):
    out = mlp_forward(net, np.atleast_2d(x))
    err = out - np.atleast_2d(y)
    return float(np.mean(np.sum(err * err, axis=1)))


def finite_diff_grads(net, x, y, h=1e-4):
    """Central-difference gradients, the independent oracle for mlp_grad."""
    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            lp = batch_loss(net, x, y)
            flat_p[i] = orig - h
            lm = batch_loss(net, x, y)
            flat_p[i] = orig
            flat_g[i] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def scalar_net(w, b, activation="relu"):
    net = mlp_init([1, 1], activation)
    net.weights[0][:] = w
    net.biases[0][:] = b
    # a 1-1 net has no hidden layer; emulate the activation by inserting one
    return net


def relu_net_1_1(w, b):
    """1-1 net with a relu unit: widths [1, 1, 1], hidden weight w, output identity."""
    net = mlp_init([1, 1, 1], "relu")
    net.weights[0][:] = w
    net.biases[0][:] = b
    net.weights[1][:] = 1.0
    net.biases[1][:] = 0.0
    return net


class TestForward:
    def test_zero_net_outputs_zero(self):
        net = mlp_init([3, 4, 2], "relu", np.random.default_rng(0))
        for w in net.weights:
            w[:] = 0.0
        out = mlp_forward(net, np.array([1.0, -2.0, 3.0]))
        assert np.array_equal(out, np.zeros(2))

    def test_identity_relu_passes_positive(self):
        net = relu_net_1_1(1.0, 0.0)
        assert mlp_forward(net, np.array([2.0]))[0] == 2.0

    def test_relu_clamps_negative(self):
        net = relu_net_1_1(-1.0, 0.0)
        assert mlp_forward(net, np.array([3.0]))[0] == 0.0

    def test_dimension_mismatch_rejected(self):
        net = mlp_init([3, 2], rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            mlp_forward(net, np.zeros(4))

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        net = mlp_init([4, 8, 3], "tanh", rng)
        x = rng.normal(size=(5, 4))
        assert np.array_equal(mlp_forward(net, x), mlp_forward(net, x))


class TestGrad:
    def test_gradient_zero_at_loss_minimum(self):
        net = scalar_net(1.0, 0.0)
        loss, grads = mlp_grad(net, np.array([[1.0]]), np.array([[1.0]]))
        assert loss == 0.0
        assert all(np.all(g == 0.0) for g in grads)

    def test_hand_derived_linear_gradient(self):
        # loss (w x + b - y)^2 with w=0, b=0, x=1, y=2: d/dw = d/db = -4
        net = scalar_net(0.0, 0.0)
        loss, grads = mlp_grad(net, np.array([[1.0]]), np.array([[2.0]]))
        assert loss == pytest.approx(4.0)
        assert grads[0][0, 0] == pytest.approx(-4.0)
        assert grads[1][0] == pytest.approx(-4.0)

    def test_empty_batch_rejected(self):
        net = mlp_init([2, 2], rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            mlp_grad(net, np.zeros((0, 2)), np.zeros((0, 2)))

    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    def test_matches_finite_differences(self, activation):
        rng = np.random.default_rng(1)
        total, good, abs_ok = 0, 0, 0
        for _ in range(8):
            depth = int(rng.integers(1, 4))
            widths = [int(rng.integers(1, 17)) for _ in range(depth + 1)]
            net = mlp_init(widths, activation, rng)
            b = int(rng.integers(1, 9))
            x = rng.normal(size=(b, widths[0]))
            y = rng.normal(size=(b, widths[-1]))
            _, grads = mlp_grad(net, x, y)
            fd = finite_diff_grads(net, x, y)
            for g, f in zip(grads, fd):
                rel = np.abs(g - f) / np.maximum(np.abs(f), 1e-8)
                total += g.size
                good += int(np.sum(rel < 1e-3))
                abs_ok += int(np.sum((rel >= 1e-3) & (np.abs(g - f) < 1e-6)))
        assert good / total >= 0.99
        assert good + abs_ok == total


class TestAdam:
    def test_zero_gradients_leave_parameters(self):
        net = mlp_init([2, 3, 1], rng=np.random.default_rng(1))
        before = [p.copy() for p in net.params()]
        state = adam_init(net)
        adam_step(net, [np.zeros_like(p) for p in net.params()], state)
        assert state.step == 1
        for p, b in zip(net.params(), before):
            assert np.array_equal(p, b)

    def test_first_step_is_signed_lr(self):
        # with zero initial moments the first update is -sign(g) lr / (1 + eps/|g|)
        net = scalar_net(0.5, 0.0)
        state = adam_init(net, lr=1e-3)
        g = np.array([[2.0]])
        adam_step(net, [g, np.zeros(1)], state)
        update = net.weights[0][0, 0] - 0.5
        expect = -1e-3 * 2.0 / (2.0 + state.eps)
        assert update == pytest.approx(expect, rel=1e-12)
        assert abs(update + np.sign(2.0) * 1e-3) < 1e-6

    def test_repeated_gradient_update_not_growing(self):
        net = scalar_net(0.0, 0.0)
        state = adam_init(net, lr=1e-3)
        g = [np.array([[3.0]]), np.array([0.7])]
        w0 = net.weights[0][0, 0]
        adam_step(net, g, state)
        w1 = net.weights[0][0, 0]
        adam_step(net, g, state)
        w2 = net.weights[0][0, 0]
        assert abs(w2 - w1) <= abs(w1 - w0) + 1e-9

    def test_non_finite_gradient_skips_step(self):
        net = scalar_net(1.0, 0.0)
        state = adam_init(net)
        bad = [np.array([[np.nan]]), np.array([0.0])]
        with pytest.warns(RuntimeWarning):
            adam_step(net, bad, state)
        assert state.step == 0
        assert net.weights[0][0, 0] == 1.0

    def test_long_run_stays_finite(self):
        rng = np.random.default_rng(3)
        net = mlp_init([3, 8, 2], "relu", rng)
        state = adam_init(net)
        x = rng.uniform(-1, 1, size=(16, 3))
        y = rng.uniform(-1, 1, size=(16, 2))
        for _ in range(10_000):
            _, grads = mlp_grad(net, x, y)
            adam_step(net, grads, state)
        assert all(np.isfinite(p).all() for p in net.params())
        assert state.step == 10_000

    def test_training_is_deterministic(self):
        def train():
            rng = np.random.default_rng(11)
            net = mlp_init([2, 6, 1], "tanh", rng)
            state = adam_init(net)
            for _ in range(50):
                x = rng.normal(size=(4, 2))
                y = rng.normal(size=(4, 1))
                _, grads = mlp_grad(net, x, y)
                adam_step(net, grads, state)
            return net

        a, b = train(), train()
        for pa, pb in zip(a.params(), b.params()):
            assert pa.tobytes() == pb.tobytes()


class TestCheckpoint:
    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(5)
        net = mlp_init([4, 7, 7, 2], "tanh", rng)
        blob = mlp_to_bytes(net)
        assert blob[:4] == b"ATRD"
        back = mlp_from_bytes(blob)
        assert back.widths == net.widths
        assert back.activations == net.activations
        assert mlp_to_bytes(back) == blob
        for pa, pb in zip(net.params(), back.params()):
            assert pa.tobytes() == pb.tobytes()

    def test_bad_magic_rejected(self):
        with pytest.raises(ValueError):
            mlp_from_bytes(b"NOPE" + b"\x00" * 16)
