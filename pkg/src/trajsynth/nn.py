"""Dense network core: batched MLP forward/backward, Adam updates, binary checkpoints.

Everything downstream (denoisers, the length estimator, the Q-network) is a
plain fully-connected net trained with squared error, so this module is the
only place that touches gradients. All arithmetic is float64.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"ATRD"
FORMAT_VERSION = 1

# blob kind tags used by the shared checkpoint container
KIND_MLP = 1
KIND_DIFFUSION = 2
KIND_BANK = 3

_ACT_CODES = {"relu": 0, "tanh": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass
class Mlp:
    """Fully-connected net. weights[i] has shape (widths[i+1], widths[i])."""

    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]  # one entry per hidden layer

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def params(self) -> list[np.ndarray]:
        """Interleaved [W0, b0, W1, b1, ...] view of the parameters."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        return Mlp(
            widths=list(self.widths),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activations=list(self.activations),
        )


def mlp_init(widths: list[int], activation: str = "relu", rng: np.random.Generator | None = None) -> Mlp:
    """Build a net with uniform +-sqrt(6/(fan_in+fan_out)) weights and zero biases."""
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    if any(w < 1 for w in widths):
        raise ValueError("layer widths must be positive")
    if activation not in _ACT_CODES:
        raise ValueError(f"unknown activation {activation!r}")
    if rng is None:
        rng = np.random.default_rng()
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(list(widths), weights, biases, [activation] * (len(widths) - 2))


def _apply_act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the net on a (d,) vector or (B, d) batch. Output layer is linear."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"input has width {x.shape[-1]}, net expects {net.in_dim}")
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if i == last else _apply_act(z, net.activations[i])
    return a[0] if single else a


def mlp_grad(net: Mlp, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Loss and exact gradients of the batch-mean squared error.

    The loss is mean over the batch of the summed squared error across output
    dimensions. Gradients come back in the same [W0, b0, ...] order as
    ``net.params()``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if y.ndim == 1:
        y = y[None, :]
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[0] != y.shape[0]:
        raise ValueError("input and target batch sizes differ")
    if x.shape[1] != net.in_dim or y.shape[1] != net.out_dim:
        raise ValueError("batch shapes do not match net widths")

    # forward, keeping pre- and post-activations for the backward pass
    batch = x.shape[0]
    acts = [x]
    zs = []
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        zs.append(z)
        a = z if i == last else _apply_act(z, net.activations[i])
        acts.append(a)

    err = acts[-1] - y
    loss = float(np.mean(np.sum(err * err, axis=1)))

    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(net.weights))
    delta = (2.0 / batch) * err
    for i in range(last, -1, -1):
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i]) * _act_grad(zs[i - 1], acts[i], net.activations[i - 1])
    return loss, grads


@dataclass
class AdamState:
    """Adaptive-moment optimizer state, one (m, v) pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(net: Mlp, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    params = net.params()
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(net: Mlp, grads: list[np.ndarray], state: AdamState) -> None:
    """One in-place adaptive-moment update. Non-finite gradients skip the step."""
    params = net.params()
    if len(grads) != len(params):
        raise ValueError("gradient count does not match parameter count")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise ValueError("gradient shape does not match parameter shape")
    if not all(np.isfinite(g).all() for g in grads):
        warnings.warn("non-finite gradient; optimizer step skipped", RuntimeWarning)
        return
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    inv_sqrt_c2 = 1.0 / np.sqrt(1.0 - b2 ** t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v)
        denom *= inv_sqrt_c2
        denom += state.eps
        step = m * (state.lr / c1)
        step /= denom
        p -= step


# --- binary checkpoint plumbing -------------------------------------------
#
# Shared container: MAGIC + u32 version + u8 kind + kind-specific payload.
# Integers are little-endian; floats are raw little-endian float64 in
# row-major order, so round-trips are bit-exact.


class ByteReader:
    """Cursor over a checkpoint buffer."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def blob(self) -> bytes:
        return self.take(self.u64())

    def done(self) -> bool:
        return self.pos == len(self.data)


def pack_u32(v: int) -> bytes:
    return struct.pack("<I", v)


def pack_u64(v: int) -> bytes:
    return struct.pack("<Q", v)


def pack_f64(v: float) -> bytes:
    return struct.pack("<d", v)


def pack_floats(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def pack_blob(b: bytes) -> bytes:
    return pack_u64(len(b)) + b


def header(kind: int) -> bytes:
    return MAGIC + pack_u32(FORMAT_VERSION) + bytes([kind])


def read_header(r: ByteReader, expect_kind: int) -> None:
    if r.take(4) != MAGIC:
        raise ValueError("bad checkpoint magic")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    kind = r.u8()
    if kind != expect_kind:
        raise ValueError(f"checkpoint kind {kind} does not match expected {expect_kind}")


def mlp_to_bytes(net: Mlp) -> bytes:
    parts = [header(KIND_MLP), pack_u32(len(net.widths))]
    parts += [pack_u32(w) for w in net.widths]
    parts += [bytes([_ACT_CODES[a]]) for a in net.activations]
    for w, b in zip(net.weights, net.biases):
        parts.append(pack_floats(w))
        parts.append(pack_floats(b))
    return b"".join(parts)


def mlp_from_bytes(data: bytes) -> Mlp:
    r = ByteReader(data)
    read_header(r, KIND_MLP)
    n = r.u32()
    widths = [r.u32() for _ in range(n)]
    activations = [_ACT_NAMES[r.u8()] for _ in range(n - 2)]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(r.floats(fan_out * fan_in).reshape(fan_out, fan_in))
        biases.append(r.floats(fan_out))
    return Mlp(widths, weights, biases, activations)
