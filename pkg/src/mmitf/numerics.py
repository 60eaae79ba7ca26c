"""Small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the pointing transformer needs are provided. Every
operation records its parents and a backward closure when any input
requires a gradient; the record is rebuilt on each forward pass.
"""

from __future__ import annotations

import contextlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), _bw)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), _bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split on sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


# --------------------------------------------------------------------------
# shape
# --------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    """Permute axes; default swaps the last two."""
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, _bw)


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = a.shape

    def _bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(np.asarray(a.data.sum(axis=axis)), (a,), _bw)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


# --------------------------------------------------------------------------
# linear algebra and attention
# --------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; leading axes broadcast like ``numpy.matmul``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    if b.ndim == 2:
        # batched activations times a weight matrix: one flat GEMM each way
        k, n = b.shape
        a2 = a.data.reshape(-1, k)

        def _bw(g):
            g2 = g.reshape(-1, n)
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _result((a2 @ b.data).reshape(a.shape[:-1] + (n,)), (a, b), _bw)

    def _bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.data @ b.data, (a, b), _bw)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result(s, (x,), _bw)


# Added to masked logits; exp() of it underflows to exactly zero.
MASK_PENALTY = -1e30


def scaled_attention(Q: Tensor, K: Tensor, V: Tensor, mask=None) -> Tensor:
    """softmax(Q K^T / sqrt(d) + penalty) V over the last two axes.

    ``mask`` is a boolean array over keys; False marks a key as excluded.
    """
    d = Q.shape[-1]
    if K.shape[-1] != d or V.shape[-1] != K.shape[-1]:
        raise ValueError(f"attention width mismatch: Q{Q.shape} K{K.shape} V{V.shape}")
    if K.shape[-2] != V.shape[-2]:
        raise ValueError(f"key/value count mismatch: K{K.shape} V{V.shape}")
    logits = matmul(Q, transpose(K)) * (1.0 / math.sqrt(d))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-1] != K.shape[-2]:
            raise ValueError(f"mask length {mask.shape[-1]} != key count {K.shape[-2]}")
        if not mask.any(axis=-1).all():
            raise ValueError("attention over a fully masked key set")
        logits = add(logits, Tensor(np.where(mask, 0.0, MASK_PENALTY)))
    return matmul(softmax_rows(logits), V)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def _bw(g):
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        red = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _result(out, (x, gamma, beta), _bw)


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

BCE_CLAMP = 1e-12


def bce_loss(scores: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy over all entries of ``scores``."""
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.float64)
    if y.shape != scores.shape:
        raise ValueError(f"bce_loss length mismatch: scores {scores.shape} vs labels {y.shape}")
    p = np.clip(scores.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n
    inside = (scores.data > BCE_CLAMP) & (scores.data < 1.0 - BCE_CLAMP)

    def _bw(g):
        return (g * inside * (p - y) / (p * (1.0 - p)) / n,)

    return _result(np.asarray(loss), (scores,), _bw)


# --------------------------------------------------------------------------
# reverse pass
# --------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires a gradient.

    The recorded graph is released afterwards; a second call on the same
    root raises instead of silently double-counting.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward already ran on this graph; run a new forward pass first")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor that requires grad")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accumulate(node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
        node._parents = ()
        node._backward = None
    loss._consumed = True


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "OptimizerState":
        state = cls(**hyper)
        state.first_moment = [np.zeros_like(_data(p)) for p in params]
        state.second_moment = [np.zeros_like(_data(p)) for p in params]
        return state


def _data(p) -> np.ndarray:
    return p.data if isinstance(p, Tensor) else p


def adam_step(params, grads, state: OptimizerState) -> None:
    """One bias-corrected Adam update, applied in place."""
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ValueError("params, grads and optimizer state differ in length")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        w = _data(p)
        if g is None:
            g = np.zeros_like(w)
        if g.shape != w.shape or m.shape != w.shape:
            raise ValueError(f"adam shape mismatch: param {w.shape}, grad {g.shape}, moment {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        w -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState.for_params(
            self.params, learning_rate=lr, beta1=betas[0], beta2=betas[1], epsilon=eps
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)


# --------------------------------------------------------------------------
# checkpoint container
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MMITFCK1"


def save_checkpoint(path, arrays: dict[str, np.ndarray], header: dict | None = None) -> None:
    """Write ``arrays`` as little-endian float64 blobs behind a JSON header.

    Layout: 8-byte magic, uint64 LE header length, UTF-8 JSON header,
    then the concatenated array bytes in header order.
    """
    entries = []
    offset = 0
    blobs = []
    for key in sorted(arrays):
        arr = np.array(arrays[key], dtype="<f8", order="C")
        entries.append({"key": key, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    head = json.dumps({"tensors": entries, **(header or {})}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen])
    body = raw[16 + hlen :]
    arrays = {}
    for e in header.pop("tensors"):
        shape = tuple(e["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        start = e["offset"]
        arrays[e["key"]] = np.frombuffer(body[start : start + 8 * n], dtype="<f8").astype(np.float64).reshape(shape)
    return arrays, header
