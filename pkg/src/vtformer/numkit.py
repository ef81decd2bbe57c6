"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the handful of ops the tokenizer and predictor need are provided. Every
op works on arbitrary leading (batch) axes; broadcasting follows numpy rules and
the backward pass reduces gradients back to each operand's shape.

Gradients are recorded only while a :class:`Tape` is active::

    with Tape() as tape:
        loss = mean(square(matmul(x, w)))
    tape.backward(loss)
    w.grad  # dloss/dw
"""
from __future__ import annotations

import builtins
import json
import math
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class NumkitError(Exception):
    """Base class for numeric errors raised by this module."""


class DimensionError(NumkitError, ValueError):
    pass


class DegenerateRowError(NumkitError, ValueError):
    pass


class PoisonedGradientError(NumkitError, FloatingPointError):
    pass


class Tensor:
    """An ndarray plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE) if not isinstance(data, np.ndarray) or data.dtype != DTYPE else data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

@dataclass
class _Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of differentiable ops.

    Ops are appended in execution order, which is a topological order of the
    computation graph, so walking the list backwards visits every op exactly
    once after all of its consumers.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor, visit: Callable[[int], None] | None = None) -> None:
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for idx in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[idx]
            if visit is not None:
                visit(idx)
            g = node.output.grad
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                t.grad = gi if t.grad is None else t.grad + gi
            # intermediate gradients are no longer needed
            if node.output.name is None:
                node.output.grad = None
        self.nodes.clear()


@contextmanager
def no_grad():
    """Suspend recording on every active tape."""
    saved = _ACTIVE[:]
    _ACTIVE.clear()
    try:
        yield
    finally:
        _ACTIVE[:] = saved


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    needs = bool(_ACTIVE) and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        _ACTIVE[-1].nodes.append(_Node(tuple(inputs), out, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def square(x: Tensor) -> Tensor:
    return _record(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    pos = x.data >= 0
    return _record(np.where(pos, x.data, slope * x.data), (x,),
                   lambda g: (np.where(pos, g, slope * g),))


def sigmoid(x: Tensor) -> Tensor:
    s = np.empty_like(x.data)
    pos = x.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    s[~pos] = e / (1.0 + e)
    return _record(s, (x,), lambda g: (g * s * (1.0 - s),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity outside training or at rate 0."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an RNG")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batched over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(a.data @ b.data, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _record(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take(x: Tensor, index) -> Tensor:
    """Basic (slice) or advanced indexing with a scatter-add backward."""
    shape = x.shape
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _record(x.data[index], (x,), backward)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _record(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def max(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Max along one axis; the gradient goes to the first maximal entry."""
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)
    shape = x.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros(shape, dtype=DTYPE)
        np.put_along_axis(full, idx, g, axis=axis)
        return (full,)

    return _record(out if keepdims else np.squeeze(out, axis), (x,), backward)


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis. ``-inf`` entries map to exactly 0."""
    data = x.data
    row_max = data.max(axis=-1, keepdims=True)
    if np.any(np.isneginf(row_max)):
        raise DegenerateRowError("softmax row has every entry masked (-inf)")
    e = np.exp(data - row_max)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record(s, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm needs a last axis of at least 2, got {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _record(out, (x, gain, bias), backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over every component."""
    return mean(square(sub(pred, target)))


# ---------------------------------------------------------------------------
# parameters and optimisation
# ---------------------------------------------------------------------------

@dataclass
class ParamEntry:
    value: Tensor
    m: np.ndarray
    v: np.ndarray

    @property
    def grad(self) -> np.ndarray:
        g = self.value.grad
        return np.zeros_like(self.value.data) if g is None else g


@dataclass
class ParamStore:
    """Named trainable tensors with their Adam moment estimates."""

    entries: "OrderedDict[str, ParamEntry]" = field(default_factory=OrderedDict)
    step_count: int = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=DTYPE)
        t = Tensor(value, requires_grad=True, name=name)
        self.entries[name] = ParamEntry(t, np.zeros_like(value), np.zeros_like(value))
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.entries if n.startswith(prefix)]

    def count(self, prefix: str = "") -> int:
        return int(np.sum([self.entries[n].value.data.size for n in self.names(prefix)]))

    def zero_grad(self) -> None:
        for e in self.entries.values():
            e.value.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        return {n: e.grad for n, e in self.entries.items()}

    # serialisation ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "params": {
                n: {"shape": list(e.value.shape), "values": e.value.data.ravel().tolist()}
                for n, e in self.entries.items()
            },
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ParamStore":
        store = cls()
        for name, rec in payload["params"].items():
            values = np.asarray(rec["values"], dtype=DTYPE)
            shape = tuple(rec["shape"])
            if values.size != math.prod(shape):
                raise DimensionError(f"{name}: {values.size} values for shape {shape}")
            store.add(name, values.reshape(shape))
        store.step_count = int(payload.get("step_count", 0))
        return store

    def load_values(self, other: "ParamStore") -> None:
        """Copy values from ``other``; names and shapes must match exactly."""
        if set(other.entries) != set(self.entries):
            missing = set(self.entries) ^ set(other.entries)
            raise KeyError(f"parameter names differ: {sorted(missing)[:5]}")
        for name, e in self.entries.items():
            src = other.entries[name].value.data
            if src.shape != e.value.shape:
                raise DimensionError(f"{name}: shape {src.shape} != {e.value.shape}")
            e.value.data = src.copy()
        self.step_count = other.step_count


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def adam_step(store: ParamStore, lr: float, weight_decay: float = 0.0, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """One bias-corrected Adam update with decoupled weight decay.

    Missing gradients count as zero. Gradients are cleared afterwards.
    """
    for name, e in store.entries.items():
        if e.value.grad is not None and not np.all(np.isfinite(e.value.grad)):
            raise PoisonedGradientError(f"non-finite gradient in parameter {name!r}")
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for e in store.entries.values():
        g = e.grad
        e.m *= beta1
        e.m += (1.0 - beta1) * g
        e.v *= beta2
        e.v += (1.0 - beta2) * g * g
        w = e.value.data
        if weight_decay:
            w *= 1.0 - lr * weight_decay
        w -= lr * (e.m / c1) / (np.sqrt(e.v / c2) + eps)
        e.value.grad = None
    return store


def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], h: float | Sequence[float] = 1e-5,
               max_elements: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Largest relative gap between tape gradients and central differences.

    ``f`` rebuilds the scalar output from the current values of ``params``;
    each element is perturbed in place and restored. With ``max_elements``
    only that many randomly chosen entries of each tensor are probed.

    ``h`` may list several step sizes. Large steps straddle activation kinks,
    small ones drown near-zero derivatives in roundoff, so each entry keeps
    the estimate that agrees best with the tape.
    """
    steps = [float(h)] if np.isscalar(h) else [float(v) for v in h]
    params = list(params)
    for p in params:
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        out = f()
    tape.backward(out)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        probe = range(flat.size)
        if max_elements is not None and flat.size > max_elements:
            probe = (rng or np.random.default_rng(0)).choice(flat.size, max_elements, replace=False)
        for i in probe:
            a = analytic.reshape(-1)[i]
            best = np.inf
            for step in steps:
                orig = flat[i]
                flat[i] = orig + step
                fp = float(f().data)
                flat[i] = orig - step
                fm = float(f().data)
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * step)
                best = builtins.min(best, abs(a - numeric) / builtins.max(abs(a), abs(numeric), 1e-8))
            worst = builtins.max(worst, best)
        p.grad = None
    return worst


def save_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
