"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation records its parents and a closure that pushes the upstream
gradient back to them.  ``Tensor.backward`` walks the recorded graph in
reverse topological order.  Broadcasting follows numpy; gradients are summed
back to the operand shape.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, StateError

DTYPE = np.float64


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array that remembers how it was computed."""

    __array_priority__ = 100.0
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = _backward

    # -- basics -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=DTYPE, copy=True)
        else:
            self.grad = self.grad + grad

    # -- graph traversal --------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf.

        Without an explicit seed gradient the tensor must be a scalar.
        """
        if not self.requires_grad:
            raise StateError("backward() called on a tensor with no recorded forward graph")
        if grad is None:
            if self.data.size != 1:
                raise StateError("backward() without a seed gradient needs a scalar loss")
            grad = np.ones_like(self.data)
        grad = _as_array(grad)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A named, trainable leaf tensor."""

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=DTYPE, copy=True), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else _wrap(value)


_GRAD_ENABLED = True


class no_grad:
    """Context manager that stops graph recording (forward values only)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev


def _wrap(data: np.ndarray, requires_grad: bool = False, parents: tuple = (), backward=None) -> Tensor:
    out = object.__new__(Tensor)
    out.data = data if isinstance(data, np.ndarray) and data.dtype == DTYPE else _as_array(data)
    out.requires_grad = requires_grad
    out.grad = None
    out._parents = parents
    out._backward = backward
    return out


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if not _GRAD_ENABLED:
        return _wrap(data)
    for p in parents:
        if p.requires_grad:
            return _wrap(data, True, tuple(parents), backward)
    return _wrap(data)


# -- elementwise binary ----------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            (a, _unbroadcast(g / b.data, a.shape)),
            (b, _unbroadcast(-g * out / b.data, b.shape)),
        ),
    )


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _make(
        a.data**exponent,
        (a,),
        lambda g: ((a, g * exponent * a.data ** (exponent - 1)),),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: ((a, g @ b.data.T), (b, a.data.T @ g)),
    )


# -- elementwise unary -----------------------------------------------------
def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: ((a, g * out),))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: ((a, g / a.data),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: ((a, g * 0.5 / out),))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: ((a, g * np.sign(a.data)),))


def relu(x) -> Tensor:
    """Elementwise max(0, x)."""
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: ((x, g * mask),))


def softplus(x) -> Tensor:
    """ln(1 + e^x), computed without overflow."""
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    sig = _sigmoid(x.data)
    return _make(out, (x,), lambda g: ((x, g * sig),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return expit(v)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return _make(out, (x,), lambda g: ((x, g * out * (1.0 - out)),))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return ((x, out * (g - (g * out).sum(axis=axis, keepdims=True))),)

    return _make(out, (x,), backward)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only where the value is interior."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: ((x, g * inside),))


# -- reductions and shape --------------------------------------------------
def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.shape)),)

    return _make(out, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(a.shape)),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: ((a, g.T),))


def take(a, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return ((a, full),)

    return _make(a.data[index], (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(zip(tensors, np.split(g, bounds, axis=axis)))

    return _make(out, tensors, backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple((t, parts[i]) for i, t in enumerate(tensors))

    return _make(out, tensors, backward)


def tile_rows(a, reps: int) -> Tensor:
    """Repeat the leading axis ``reps`` times, block-wise: [a; a; ...]."""
    a = as_tensor(a)
    if reps == 1:
        return a
    out = np.concatenate([a.data] * reps, axis=0)

    def backward(g):
        return ((a, g.reshape((reps,) + a.shape).sum(axis=0)),)

    return _make(out, (a,), backward)


# -- layers ----------------------------------------------------------------
def linear_forward(W, b, x) -> Tensor:
    """y = W x + b for a single vector, or X W^T + b for a row batch.

    ``W`` is (out, in), ``b`` is (out,), ``x`` is (in,) or (n, in).
    """
    W, b, x = as_tensor(W), as_tensor(b), as_tensor(x)
    if W.data.ndim != 2 or b.data.shape != (W.data.shape[0],) or x.data.ndim > 2 \
            or x.data.shape[-1:] != (W.data.shape[1],):
        raise ConfigurationError(
            f"linear_forward shape mismatch: W{W.shape}, b{b.shape}, x{x.shape}"
        )
    xd, Wd = x.data, W.data
    out = xd @ Wd.T + b.data

    def backward(g):
        if xd.ndim == 1:
            return ((x, g @ Wd), (W, np.outer(g, xd)), (b, g))
        return ((x, g @ Wd), (W, g.T @ xd), (b, g.sum(axis=0)))

    return _make(out, (x, W, b), backward)


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
