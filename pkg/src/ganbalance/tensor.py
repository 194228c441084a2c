"""Reverse-mode automatic differentiation over n-dimensional float arrays.

A ``Tensor`` wraps a numpy buffer (float32 by default, float64 available for
high-precision verification runs) together with an optional gradient buffer.
Every operation that produces a tensor records its provenance -- the parent
tensors and a closure that maps the output gradient onto the parents -- so a
single ``backward()`` call on a scalar loss populates ``grad`` on every
reachable leaf with ``requires_grad=True``.

The recorded provenance is consumed exactly once: ``backward()`` releases the
graph as it walks it, which frees saved forward buffers (im2col workspaces
and the like) as early as possible.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class _GradMode(threading.local):
    enabled = True


_grad_mode = _GradMode()


def grad_enabled() -> bool:
    return _grad_mode.enabled


class no_grad:
    """Context manager that disables graph recording on the current thread."""

    def __enter__(self):
        self._prev = _grad_mode.enabled
        _grad_mode.enabled = False
        return self

    def __exit__(self, *exc):
        _grad_mode.enabled = self._prev
        return False


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class Tensor:
    """N-dimensional array with optional recorded provenance.

    Attributes:
        data: numpy array, float32 unless constructed with dtype=float64.
        grad: numpy array of the same shape, or None before backward().
        requires_grad: whether backward() should populate grad on this leaf
            (or route gradients through it, for interior nodes).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (
                np.float32,
                np.float64,
            ) else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Optional[Callable[[np.ndarray], None]] = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad=False, dtype=None):
        return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad)

    @staticmethod
    def from_op(data: np.ndarray, parents: Sequence["Tensor"], op: str,
                backward_fn: Callable[[np.ndarray], None]) -> "Tensor":
        """Wrap an op result, recording provenance if grad mode is active."""
        out = Tensor(data)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
            out._op = op
        return out

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- autodiff --------------------------------------------------------------

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def _accumulate_owned(self, g: np.ndarray):
        """Accumulate a gradient array the caller guarantees is freshly
        allocated and unshared, avoiding the defensive copy."""
        if self.grad is None and g.dtype == self.data.dtype:
            self.grad = g
        else:
            self._accumulate(g)

    def backward(self):
        """Reverse sweep from a scalar; populates grad on requires_grad leaves.

        The graph is released as it is traversed; a second backward() on the
        same subgraph is a no-op beyond the seed gradient.
        """
        if self.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            fn = node._backward_fn
            if fn is not None:
                fn(node.grad)
                node._backward_fn = None
                node._parents = ()

    # -- elementwise arithmetic (enough for losses and toy models) -------------

    def _lift(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._lift(other)
        out_data = self.data + other.data
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor.from_op(out_data, (a, b), "add", backward)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor.from_op(-self.data, (a,), "neg", backward)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor.from_op(a.data * b.data, (a, b), "mul", backward)

    __rmul__ = __mul__

    def sum(self) -> "Tensor":
        a = self
        out = np.asarray(self.data.sum(dtype=np.float64), dtype=self.data.dtype)

        def backward(g):
            if a.requires_grad:
                a._accumulate(np.broadcast_to(g, a.shape).astype(a.data.dtype))

        return Tensor.from_op(out, (a,), "sum", backward)

    def mean(self) -> "Tensor":
        a = self
        n = self.size
        out = np.asarray(self.data.mean(dtype=np.float64), dtype=self.data.dtype)

        def backward(g):
            if a.requires_grad:
                a._accumulate(np.broadcast_to(g / n, a.shape).astype(a.data.dtype))

        return Tensor.from_op(out, (a,), "mean", backward)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old_shape = self.shape

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.reshape(old_shape))

        return Tensor.from_op(self.data.reshape(shape), (a,), "reshape", backward)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _topo_order(root: Tensor) -> list[Tensor]:
    """Execution-ordered node list reachable from root (iterative DFS)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order
