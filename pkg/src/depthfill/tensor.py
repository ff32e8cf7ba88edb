"""Reverse-mode automatic differentiation on NumPy arrays.

A Tensor wraps an ndarray and remembers the Function that produced it,
forming a dynamic computation graph.  ``backward()`` walks that graph in
reverse topological order and accumulates gradients into every tensor
that asked for them.  float32 is the working precision for training;
build tensors from float64 arrays to run the whole graph in float64
(the finite-difference tests do exactly that).

GELU is the exact erf form, not the tanh approximation.
"""

from __future__ import annotations

import contextlib
from typing import Sequence

import numpy as np
from scipy.special import erf

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Skip graph recording inside the block; use for inference."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing NumPy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An ndarray plus an optional gradient slot.

    Tensors are immutable once built: no op writes to ``data`` in place,
    and only gradient accumulation ever touches ``grad``.  Calling
    ``backward`` twice on the same graph adds into existing gradients
    rather than resetting them.  Training code may rebind ``data`` to a
    whole new array between graph builds (optimizer updates, checkpoint
    loads); elementwise writes are never allowed.
    """

    __slots__ = ("data", "requires_grad", "grad", "_creator")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._creator: Function | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic; python scalars are coerced without promoting the dtype
    def __add__(self, other):
        return _record(Add(), self, _const_like(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return _record(Sub(), self, _const_like(other, self))

    def __rsub__(self, other):
        return _record(Sub(), _const_like(other, self), self)

    def __mul__(self, other):
        return _record(Mul(), self, _const_like(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _record(Div(), self, _const_like(other, self))

    def __rtruediv__(self, other):
        return _record(Div(), _const_like(other, self), self)

    def __neg__(self):
        return _record(Neg(), self)

    def __pow__(self, exponent):
        return _record(Pow(float(exponent)), self)

    def __matmul__(self, other):
        return _record(MatMul(), self, _const_like(other, self))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _record(Sum(axis, keepdims), self)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _record(Mean(axis, keepdims), self)

    def sqrt(self) -> "Tensor":
        return _record(Sqrt(), self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _record(Reshape(shape), self)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _record(Transpose(axes or None), self)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into the ``grad`` of every
        requires_grad leaf below.  Interior gradients are transient, so
        calling backward again adds one more copy into the leaves."""
        if grad is None:
            if self.data.ndim != 0:
                raise ValueError(
                    f"backward needs a scalar loss, got shape {self.data.shape}"
                )
            grad = np.ones((), dtype=self.data.dtype)
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
            if node._creator is not None:
                for parent in node._creator.inputs:
                    if parent.requires_grad:
                        stack.append((parent, False))
        flowing: dict[int, np.ndarray] = {id(self): np.asarray(grad)}
        for node in reversed(order):
            g_out = flowing.pop(id(node), None)
            if g_out is None:
                continue
            fn = node._creator
            if fn is None:
                g_out = np.asarray(g_out, dtype=node.data.dtype)
                node.grad = g_out if node.grad is None else node.grad + g_out
                continue
            for parent, g in zip(fn.inputs, fn.backward(g_out)):
                if g is None or not parent.requires_grad:
                    continue
                key = id(parent)
                flowing[key] = g if key not in flowing else flowing[key] + g


def _const_like(value, ref: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=ref.data.dtype))


class Function:
    """One recorded op: forward computes, backward maps the output
    gradient to one gradient per input (None where undefined)."""

    inputs: tuple[Tensor, ...] = ()

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray):
        raise NotImplementedError


def _record(fn: Function, *tensors: Tensor) -> Tensor:
    out = fn.forward(*(t.data for t in tensors))
    needs = _grad_enabled and any(t.requires_grad for t in tensors)
    result = Tensor(out)
    result.requires_grad = needs
    if needs:
        fn.inputs = tensors
        result._creator = fn
    return result


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, g):
        sa, sb = self.shapes
        return _unbroadcast(g, sa), _unbroadcast(g, sb)


class Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, g):
        sa, sb = self.shapes
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return (
            _unbroadcast(g * self.b, self.a.shape),
            _unbroadcast(g * self.a, self.b.shape),
        )


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = _unbroadcast(g / self.b, self.a.shape)
        gb = _unbroadcast(-g * self.a / (self.b * self.b), self.b.shape)
        return ga, gb


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class Pow(Function):
    def __init__(self, exponent: float):
        self.exponent = exponent

    def forward(self, a):
        self.a = a
        return a ** self.exponent

    def backward(self, g):
        return (g * self.exponent * self.a ** (self.exponent - 1.0),)


class Sqrt(Function):
    def forward(self, a):
        self.out = np.sqrt(a)
        return self.out

    def backward(self, g):
        return (g * 0.5 / self.out,)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError(f"matmul needs 2-D or higher operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, g):
        ga = _unbroadcast(g @ self.b.swapaxes(-1, -2), self.a.shape)
        gb = _unbroadcast(self.a.swapaxes(-1, -2) @ g, self.b.shape)
        return ga, gb


class Transpose(Function):
    def __init__(self, axes):
        self.axes = axes

    def forward(self, a):
        return np.transpose(a, self.axes)

    def backward(self, g):
        if self.axes is None:
            return (np.transpose(g),)
        return (np.transpose(g, np.argsort(self.axes)),)


class Reshape(Function):
    def __init__(self, shape):
        self.shape = shape

    def forward(self, a):
        self.in_shape = a.shape
        return a.reshape(self.shape)

    def backward(self, g):
        return (g.reshape(self.in_shape),)


class Concat(Function):
    def __init__(self, axis: int):
        self.axis = axis

    def forward(self, *arrays):
        base = arrays[0].shape
        for arr in arrays[1:]:
            other = arr.shape
            if len(other) != len(base) or any(
                o != b for d, (o, b) in enumerate(zip(other, base)) if d != self.axis % len(base)
            ):
                raise ValueError(f"concat shape mismatch along axis {self.axis}: {base} vs {other}")
        self.splits = np.cumsum([a.shape[self.axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=self.axis)

    def backward(self, g):
        return tuple(np.split(g, self.splits, axis=self.axis))


class Gather(Function):
    """Select rows along axis 0; backward scatter-adds them back."""

    def __init__(self, indices: np.ndarray):
        self.indices = indices

    def forward(self, a):
        self.in_shape = a.shape
        return a[self.indices]

    def backward(self, g):
        out = np.zeros(self.in_shape, dtype=g.dtype)
        np.add.at(out, self.indices, g)
        return (out,)


class Sum(Function):
    def __init__(self, axis, keepdims: bool):
        self.axis = axis
        self.keepdims = keepdims

    def forward(self, a):
        self.in_shape = a.shape
        return a.sum(axis=self.axis, keepdims=self.keepdims)

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, self.in_shape),)


class Mean(Function):
    def __init__(self, axis, keepdims: bool):
        self.axis = axis
        self.keepdims = keepdims

    def forward(self, a):
        self.in_shape = a.shape
        out = a.mean(axis=self.axis, keepdims=self.keepdims)
        self.count = a.size // max(out.size, 1) if a.size else 1
        return out

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g / self.count, self.in_shape),)


class Softmax(Function):
    def __init__(self, axis: int):
        self.axis = axis

    def forward(self, a):
        shifted = a - a.max(axis=self.axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=self.axis, keepdims=True)
        return self.out

    def backward(self, g):
        y = self.out
        inner = (g * y).sum(axis=self.axis, keepdims=True)
        return (y * (g - inner),)


class Gelu(Function):
    def forward(self, a):
        self.a = a
        return a * 0.5 * (1.0 + erf(a * _INV_SQRT2))

    def backward(self, g):
        a = self.a
        cdf = 0.5 * (1.0 + erf(a * _INV_SQRT2))
        pdf = np.exp(-0.5 * a * a) * _INV_SQRT2PI
        return (g * (cdf + a * pdf),)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a @ b


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``; rows sum to one."""
    return _record(Softmax(axis), x)


def gelu(x: Tensor) -> Tensor:
    return _record(Gelu(), x)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift.

    Built from primitive ops, so its gradient needs no hand derivation.
    """
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gain + bias


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return _record(Concat(axis), *tensors)


def gather(x: Tensor, indices) -> Tensor:
    """Pick rows of ``x`` (axis 0) in the order given by ``indices``."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"gather indices must be 1-D, got shape {idx.shape}")
    return _record(Gather(idx), x)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out
