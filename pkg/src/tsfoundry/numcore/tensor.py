"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float array and, when produced by a primitive, remembers
its parents and a backward closure. GradTape topologically orders the
recorded primitives reachable from a scalar output; replaying it backward
yields one gradient per requested parameter (zeros for parameters the
output does not depend on).

Default dtype is float32. Ops follow numpy promotion, so a graph built
from float64 leaves stays float64, which the finite-difference oracles
rely on.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in _FLOAT_DTYPES:
        return arr.astype(np.float32)
    return arr


class Tensor:
    """Node in the autodiff graph. `data` is immutable once consumed by an op."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=""):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def param(data, dtype=np.float32, name=""):
        return Tensor(np.array(data, dtype=dtype), requires_grad=True, name=name)

    @staticmethod
    def constant(data, dtype=None):
        return Tensor(data, requires_grad=False, dtype=dtype)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    def __rmul__(self, other):
        return mul(_lift(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _lift(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_lift(other, self.dtype), self)

    def __neg__(self):
        return mul(self, Tensor.constant(np.asarray(-1, dtype=self.dtype)))

    def __matmul__(self, other):
        return matmul(self, _lift(other, self.dtype))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _lift(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor.constant(np.asarray(value, dtype=dtype))


def _make(data, parents, backward):
    """Build an op result; records the graph only when grads are live."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- primitives ----------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _make(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = (
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
            if b.requires_grad
            else None
        )
        return ga, gb

    return _make(a.data / b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul expects >=2-D operands, got {a.data.shape} @ {b.data.shape}"
        )

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), backward)


def pow_const(a: Tensor, p: float) -> Tensor:
    out_data = a.data**p

    def backward(g):
        return (g * p * a.data ** (p - 1),)

    return _make(out_data, (a,), backward)


def texp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        return (g * out_data,)

    return _make(out_data, (a,), backward)


def tlog(a: Tensor) -> Tensor:
    def backward(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), backward)


def ttanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out_data * out_data),)

    return _make(out_data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(x.dtype, copy=False)

    def backward(g):
        return (g * out_data * (1.0 - out_data),)

    return _make(out_data, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)

    return _make(out_data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, Tensor.constant(np.asarray(1.0 / count, dtype=a.dtype)))


def amax(a: Tensor, axis=-1, keepdims=False) -> Tensor:
    out_data = a.data.max(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        full = a.data.max(axis=axis, keepdims=True)
        mask = (a.data == full).astype(a.dtype)
        mask /= mask.sum(axis=axis, keepdims=True)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (mask * g,)

    return _make(out_data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return _make(a.data.transpose(axes), (a,), backward)


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        return (_unbroadcast(g, a.shape),)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), backward)


def concat(parts, axis=0) -> Tensor:
    parts = list(parts)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(
            piece if p.requires_grad else None for piece, p in zip(pieces, parts)
        )

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def getitem(a: Tensor, idx) -> Tensor:
    def backward(g):
        ga = np.zeros(a.shape, dtype=a.dtype)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(a.data[idx].copy(), (a,), backward)


def pick_rows(a: Tensor, indices) -> Tensor:
    """out[i] = a[i, indices[i]] for a 2-D tensor."""
    indices = np.asarray(indices)
    if a.data.ndim != 2:
        raise ShapeError(f"pick_rows expects a 2-D tensor, got shape {a.shape}")
    if indices.ndim != 1 or indices.shape[0] != a.shape[0]:
        raise ShapeError(
            f"pick_rows needs one index per row: {indices.shape} vs {a.shape}"
        )
    if indices.min() < 0 or indices.max() >= a.shape[1]:
        raise IndexError(
            f"pick_rows index out of range [0, {a.shape[1]}): "
            f"min={indices.min()}, max={indices.max()}"
        )
    rows = np.arange(a.shape[0])

    def backward(g):
        ga = np.zeros(a.shape, dtype=a.dtype)
        np.add.at(ga, (rows, indices), g)
        return (ga,)

    return _make(a.data[rows, indices].copy(), (a,), backward)


# -- backward pass ---------------------------------------------------------------


class GradTape:
    """Topologically ordered record of the primitives below a scalar output."""

    def __init__(self, output: Tensor):
        if output.data.size != 1:
            raise ValueError(
                f"gradients are defined for scalar outputs only, got shape {output.shape}"
            )
        self.output = output
        self.nodes = self._toposort(output)

    @staticmethod
    def _toposort(root: Tensor):
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def gradients(self, params) -> list[Tensor]:
        """One gradient tensor per param, shape-matched, zeros if off-tape."""
        grads: dict[int, np.ndarray] = {}
        out = self.output
        grads[id(out)] = np.ones(out.shape, dtype=out.dtype)
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or node._backward is None:
                if g is not None and node._backward is None:
                    grads[id(node)] = g  # leaf: keep for param lookup
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        result = []
        for p in params:
            g = grads.get(id(p))
            if g is None:
                g = np.zeros(p.shape, dtype=p.dtype)
            result.append(Tensor(g))
        return result


def grad_of(output: Tensor, params) -> list[Tensor]:
    """Reverse-mode gradients of a scalar output w.r.t. every param."""
    return GradTape(output).gradients(params)
