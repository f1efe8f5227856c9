"""Dense tensors with taped reverse-mode differentiation.

Everything is eager numpy; while a :class:`GradientTape` is active each op
also appends a node describing how to push a gradient back to its inputs.
The op set is deliberately closed -- exactly the primitives the encoder
model and the attention regularizer need -- so a finite-difference check can
exercise all of it.

Float64 is the default. ``set_default_dtype(np.float32)`` switches to the
opt-in speed mode; gradient-check guarantees hold in 64-bit only.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_DEFAULT_DTYPE: type = np.float64

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NumericsError(RuntimeError):
    """Non-finite values or malformed autodiff requests."""


def set_default_dtype(dtype) -> None:
    """Switch the float width used for freshly created tensors."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}")
    _DEFAULT_DTYPE = dt.type


def default_dtype() -> type:
    return _DEFAULT_DTYPE


class Tensor:
    """A dense array plus autograd bookkeeping.

    Data is treated as immutable once produced by an op; training code swaps
    whole ``.data`` buffers on leaf parameters rather than mutating views.
    """

    __slots__ = ("data", "requires_grad", "name", "_leaf")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None) -> "Tensor":
        return reduce_max(self, axis=axis)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_TAPE_STACK: list["GradientTape"] = []


class GradientTape:
    """Ordered record of every grad-relevant primitive executed while active.

    Replay is deterministic: nodes are appended in execution order, and
    :func:`backward` walks them in reverse (a valid topological order).
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "GradientTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def reset(self) -> None:
        self._nodes.clear()


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    if not _TAPE_STACK:
        return out
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._leaf = False
        _TAPE_STACK[-1]._nodes.append(_Node(out, inputs, backward))
    return out


def backward(loss: Tensor, tape: GradientTape, check_finite: bool = True) -> dict[Tensor, Tensor]:
    """Reverse-mode gradients of a scalar ``loss`` recorded on ``tape``.

    Returns a map from each leaf tensor marked ``requires_grad`` (reached by
    the loss) to its gradient. Unreached leaves simply have no entry -- their
    gradient is zero. The tape is reset afterwards.
    """
    if loss.size != 1:
        raise NumericsError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[Tensor, np.ndarray] = {}
    if loss._leaf and loss.requires_grad:
        leaf_grads[loss] = grads[id(loss)]
    for node in reversed(tape._nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, ig in zip(node.inputs, in_grads):
            if ig is None or not t.requires_grad:
                continue
            acc = grads.get(id(t))
            grads[id(t)] = ig if acc is None else acc + ig
            if t._leaf:
                leaf_grads[t] = grads[id(t)]
    tape.reset()
    result = {t: Tensor(g) for t, g in leaf_grads.items()}
    if check_finite:
        for t, g in result.items():
            if not np.all(np.isfinite(g.data)):
                raise NumericsError(f"NaN/Inf gradient for {t.name or t!r}")
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise / linear ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)

    def bwd(g):
        return (g * s,)

    return _record(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for stacked matrices; either side may carry batch dims."""
    out = Tensor(a.data @ b.data)

    def bwd(g):
        bT = np.swapaxes(b.data, -1, -2)
        aT = np.swapaxes(a.data, -1, -2)
        return _unbroadcast(g @ bT, a.shape), _unbroadcast(aT @ g, b.shape)

    return _record(out, (a, b), bwd)


# -- shape manipulation ----------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        return (g.reshape(a.shape),)

    return _record(out, (a,), bwd)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes))

    def bwd(g):
        return (g.transpose(inv),)

    return _record(out, (a,), bwd)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, parts, bwd)


# -- gathers ---------------------------------------------------------------


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    out = Tensor(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record(out, (table,), bwd)


def take(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather from the flattened tensor; output has ``indices.shape``."""
    indices = np.asarray(indices)
    out = Tensor(a.data.reshape(-1)[indices])

    def bwd(g):
        flat = np.zeros(a.size, dtype=a.data.dtype)
        np.add.at(flat, indices.reshape(-1), g.reshape(-1))
        return (flat.reshape(a.shape),)

    return _record(out, (a,), bwd)


# -- nonlinearities ----------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _record(out, (a,), bwd)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    ls = shifted - lse
    out = Tensor(ls)
    y = np.exp(ls)

    def bwd(g):
        return (g - y * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    std = np.sqrt(var + eps)
    xhat = (x.data - mu) / std
    out = Tensor(xhat * gain.data + bias.data)

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead)
        gbias = g.sum(axis=lead)
        gx_hat = g * gain.data
        gx = (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        ) / std
        return gx, ggain, gbias

    return _record(out, (x, gain, bias), bwd)


def gelu(x: Tensor) -> Tensor:
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * cdf)

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return _record(out, (x,), bwd)


# -- reductions ----------------------------------------------------------


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _record(out, (a,), bwd)


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.shape).copy(),)

    return _record(out, (a,), bwd)


def reduce_max(a: Tensor, axis: int | None = None) -> Tensor:
    """Max reduction; ties send the subgradient to the first maximizer."""
    if axis is None:
        out = Tensor(a.data.max())
        idx = int(np.argmax(a.data))

        def bwd(g):
            ga = np.zeros_like(a.data)
            ga.reshape(-1)[idx] = g
            return (ga,)

        return _record(out, (a,), bwd)

    out = Tensor(a.data.max(axis=axis))
    idx = np.argmax(a.data, axis=axis)

    def bwd_axis(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(
            ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis
        )
        return (ga,)

    return _record(out, (a,), bwd_axis)


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericsError(f"non-finite values in {what}")
    return t
