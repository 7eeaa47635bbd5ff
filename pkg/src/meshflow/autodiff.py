"""Dense float64 tensors with reverse-mode gradients on an explicit tape.

The op set is exactly what the deformation architecture needs: shared
per-point linear maps, ReLU/tanh/exp, point-axis batch normalization and max
pooling, broadcast concatenation of a global code, column surgery for the
coupling blocks, and elementwise arithmetic. Each op validates shapes, checks
its output for NaN/Inf, and (when a tape is active) records a node whose
backward closure maps the output gradient to input gradients.

A tape is confined to a single thread; ops run fine without any tape active,
in which case they only compute values.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

_STATE = threading.local()


def _tape_stack() -> list:
    if not hasattr(_STATE, "stack"):
        _STATE.stack = []
    return _STATE.stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array plus an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    # convenience arithmetic (tests, small expressions)
    def __add__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Named learnable tensor. Frozen parameters still carry gradients but the
    optimizer must not update them."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, trainable={self.trainable})"


@dataclass
class Node:
    inputs: tuple
    output: Tensor
    backward_fn: object
    margin: float = np.inf


@dataclass
class Tape:
    """Ordered record of executed ops; backward walks it in exact reverse order."""

    nodes: list = field(default_factory=list)
    track_margins: bool = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def min_margin(self) -> float:
        """Smallest distance to a subgradient tie (ReLU kink, pool/NN switch)."""
        if not self.nodes:
            return np.inf
        return min(node.margin for node in self.nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(input) into .grad of every reachable tensor."""
        if loss.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        loss.accumulate_grad(np.ones_like(loss.data))
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            input_grads = node.backward_fn(g)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is not None and tensor.requires_grad:
                    tensor.accumulate_grad(grad)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")


def _make(data: np.ndarray, inputs: tuple, backward_fn, op: str,
          margin: float = np.inf) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if tape is not None:
        tape.nodes.append(Node(inputs=inputs, output=out, backward_fn=backward_fn,
                               margin=margin))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to the given shape (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------

def add(x: Tensor, y: Tensor) -> Tensor:
    try:
        data = x.data + y.data
    except ValueError:
        raise ShapeError(f"add: shapes {x.shape} and {y.shape} do not broadcast") from None

    def backward(g):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return _make(data, (x, y), backward, "add")


def sub(x: Tensor, y: Tensor) -> Tensor:
    try:
        data = x.data - y.data
    except ValueError:
        raise ShapeError(f"sub: shapes {x.shape} and {y.shape} do not broadcast") from None

    def backward(g):
        return _unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)

    return _make(data, (x, y), backward, "sub")


def mul(x: Tensor, y: Tensor) -> Tensor:
    try:
        data = x.data * y.data
    except ValueError:
        raise ShapeError(f"mul: shapes {x.shape} and {y.shape} do not broadcast") from None

    def backward(g):
        return (_unbroadcast(g * y.data, x.shape),
                _unbroadcast(g * x.data, y.shape))

    return _make(data, (x, y), backward, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    def backward(g):
        return (g * c,)

    return _make(x.data * c, (x,), backward, "scale")


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)
    mask = x.data > 0.0

    def backward(g):
        return (g * mask,)

    margin = np.inf
    tape = active_tape()
    if tape is not None and tape.track_margins and x.data.size:
        margin = float(np.abs(x.data).min())
    return _make(data, (x,), backward, "relu", margin=margin)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - data * data),)

    return _make(data, (x,), backward, "tanh")


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def backward(g):
        return (g * data,)

    return _make(data, (x,), backward, "exp")


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.full_like(x.data, float(g)),)

    return _make(np.asarray(x.data.sum()), (x,), backward, "sum_all")


def reshape(x: Tensor, shape: tuple) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(data, (x,), backward, "reshape")


def slice_column(x: Tensor, j: int) -> Tensor:
    """Column j of a 2-D tensor as an (N, 1) tensor."""
    if x.data.ndim != 2 or not (0 <= j < x.shape[1]):
        raise ShapeError(f"slice_column: bad column {j} for shape {x.shape}")
    data = x.data[:, j:j + 1].copy()

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, j:j + 1] = g
        return (gx,)

    return _make(data, (x,), backward, "slice_column")


def pad_column(col: Tensor, j: int, width: int) -> Tensor:
    """Embed an (N, 1) tensor as column j of an (N, width) zero matrix."""
    if col.data.ndim != 2 or col.shape[1] != 1 or not (0 <= j < width):
        raise ShapeError(f"pad_column: bad args shape={col.shape} j={j} width={width}")
    data = np.zeros((col.shape[0], width))
    data[:, j:j + 1] = col.data

    def backward(g):
        return (g[:, j:j + 1].copy(),)

    return _make(data, (col,), backward, "pad_column")


# ---------------------------------------------------------------------------
# Point-network ops
# ---------------------------------------------------------------------------

def pointwise_linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Shared per-point linear map: out[n, :] = x[n, :] @ W + b.

    This is a 1x1 convolution over the point axis.
    """
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError("pointwise_linear expects x (N,Cin), W (Cin,Cout), b (Cout,)")
    if x.shape[1] != weight.shape[0] or bias.shape[0] != weight.shape[1]:
        raise ShapeError(
            f"pointwise_linear: x {x.shape}, W {weight.shape}, b {bias.shape} do not conform")
    data = x.data @ weight.data + bias.data

    def backward(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return _make(data, (x, weight, bias), backward, "pointwise_linear")


def concat_broadcast(per_point: Tensor, global_row: Tensor) -> Tensor:
    """Append a global (1, C2) row to every row of an (N, C1) tensor."""
    if per_point.data.ndim != 2 or global_row.data.ndim != 2 or global_row.shape[0] != 1:
        raise ShapeError(
            f"concat_broadcast expects (N,C1) and (1,C2), got {per_point.shape}, {global_row.shape}")
    n = per_point.shape[0]
    c1 = per_point.shape[1]
    data = np.concatenate([per_point.data, np.broadcast_to(global_row.data, (n, global_row.shape[1]))],
                          axis=1)

    def backward(g):
        return g[:, :c1].copy(), g[:, c1:].sum(axis=0, keepdims=True)

    return _make(data, (per_point, global_row), backward, "concat_broadcast")


def maxpool_points(x: Tensor) -> Tensor:
    """Per-channel max over the point axis, (N, C) -> (1, C).

    The gradient routes to the first maximal index per channel, so ties break
    deterministically.
    """
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"maxpool_points expects a nonempty (N, C) tensor, got {x.shape}")
    idx = x.data.argmax(axis=0)
    data = x.data[idx, np.arange(x.shape[1])][None, :]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx, np.arange(x.shape[1])] = g[0]
        return (gx,)

    margin = np.inf
    tape = active_tape()
    if tape is not None and tape.track_margins and x.shape[0] >= 2:
        part = np.partition(x.data, -2, axis=0)
        margin = float((part[-1] - part[-2]).min())
    return _make(data, (x,), backward, "maxpool_points", margin=margin)


@dataclass
class BatchNormState:
    """Running statistics for one batchnorm layer (not differentiated)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int) -> "BatchNormState":
        return cls(running_mean=np.zeros(channels), running_var=np.ones(channels))


def batchnorm_points(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                     mode: str) -> Tensor:
    """Normalize each channel over the point axis.

    Train mode uses batch statistics (biased variance) and updates the running
    statistics in place; eval mode applies the stored statistics per point.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    if x.data.ndim != 2:
        raise ShapeError(f"batchnorm_points expects (N, C), got {x.shape}")
    n, c = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("gamma/beta must have shape (C,)")
    if mode == "train":
        if n < 2:
            raise ConfigError("batchnorm in train mode requires at least 2 points")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mean) * inv_std
        state.running_mean = state.momentum * state.running_mean + (1 - state.momentum) * mean
        state.running_var = state.momentum * state.running_var + (1 - state.momentum) * var

        def backward(g):
            dxhat = g * gamma.data
            dx = (inv_std / n) * (
                n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    else:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv_std

        def backward(g):
            return g * gamma.data * inv_std, (g * xhat).sum(axis=0), g.sum(axis=0)

    data = xhat * gamma.data + beta.data
    return _make(data, (x, gamma, beta), backward, "batchnorm_points")
