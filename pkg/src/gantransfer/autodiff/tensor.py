"""Dense tensors with reverse-mode automatic differentiation.

Each operation that involves a tensor with ``requires_grad`` records a node:
its parent tensors plus a closure mapping the upstream gradient to one
gradient per parent.  :meth:`Tensor.backward` orders the recorded nodes
topologically and walks them once in reverse.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import DetachedTensor, DomainError, NumericalOverflow, ShapeMismatch

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_ALLOWED_DTYPES = (np.float32, np.float64)
DEFAULT_DTYPE = np.float32

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray) and dtype is None:
        if data.dtype.type in _ALLOWED_DTYPES:
            return data
        return data.astype(DEFAULT_DTYPE)
    arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
    if arr.dtype.type not in _ALLOWED_DTYPES:
        raise TypeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    return arr


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An n-dimensional float array that can carry a gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable] = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Tuple["Tensor", ...],
                 backward: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def _lift(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # -- basic properties ------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", self._lift(other), self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", self._lift(other), self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", self._lift(other), self)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __rtruediv__(self, other):
        return elementwise("div", self._lift(other), self)

    def __neg__(self):
        return elementwise("neg", self)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

    def log(self):
        return elementwise("log", self)

    def exp(self):
        return elementwise("exp", self)

    # -- reductions and shape ops ---------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        in_shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, in_shape).astype(self.data.dtype, copy=True),)

        return Tensor._from_op(np.asarray(out, dtype=self.dtype), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        in_shape = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError as exc:
            raise ShapeMismatch(str(exc)) from None
        return Tensor._from_op(out, (self,), lambda g: (g.reshape(in_shape),), "reshape")

    def flatten(self) -> "Tensor":
        return self.reshape(self.shape[0], -1)

    def transpose(self, *axes) -> "Tensor":
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor._from_op(self.data.transpose(axes), (self,),
                               lambda g: (g.transpose(inv),), "transpose")

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, idx) -> "Tensor":
        in_shape, dtype = self.shape, self.dtype

        def backward(g):
            full = np.zeros(in_shape, dtype=dtype)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._from_op(np.array(self.data[idx]), (self,), backward, "index")

    # -- reverse mode ----------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if not self.requires_grad:
            raise DetachedTensor("tensor was not recorded on a gradient tape")
        if grad is None:
            if self.size != 1:
                raise ShapeMismatch("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def tensor(data: ArrayLike, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalOverflow(f"{op} produced non-finite values")
    return arr


def elementwise(kind: str, a: ArrayLike, b: Optional[ArrayLike] = None) -> Tensor:
    """Apply an elementwise operation.

    ``kind`` is one of add, sub, mul, div (binary) or neg, log, exp (unary).
    Binary operands follow numpy broadcasting; gradients are summed back to
    each operand's shape.
    """
    a = a if isinstance(a, Tensor) else Tensor(a)
    if kind in ("neg", "log", "exp"):
        if b is not None:
            raise TypeError(f"{kind} takes a single operand")
        x = a.data
        if kind == "neg":
            return Tensor._from_op(-x, (a,), lambda g: (-g,), "neg")
        if kind == "log":
            if np.any(x <= 0):
                raise DomainError("log requires strictly positive inputs")
            return Tensor._from_op(np.log(x), (a,), lambda g: (g / x,), "log")
        with np.errstate(over="ignore"):
            y = np.exp(x)
        _check_finite(y, "exp")
        return Tensor._from_op(y, (a,), lambda g: (g * y,), "exp")

    if b is None:
        raise TypeError(f"{kind} needs two operands")
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    x, y = a.data, b.data
    try:
        out_shape = np.broadcast_shapes(x.shape, y.shape)
    except ValueError:
        raise ShapeMismatch(f"cannot combine shapes {x.shape} and {y.shape}") from None
    del out_shape
    sa, sb = x.shape, y.shape
    if kind == "add":
        out = x + y
        bw = lambda g: (unbroadcast(g, sa), unbroadcast(g, sb))
    elif kind == "sub":
        out = x - y
        bw = lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb))
    elif kind == "mul":
        out = x * y
        bw = lambda g: (unbroadcast(g * y, sa), unbroadcast(g * x, sb))
    elif kind == "div":
        if np.any(y == 0):
            raise DomainError("division by zero")
        out = x / y
        bw = lambda g: (unbroadcast(g / y, sa), unbroadcast(-g * x / (y * y), sb))
    else:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return Tensor._from_op(out, (a, b), bw, kind)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"inner dimensions differ: {a.shape} @ {b.shape}")
    x, y = a.data, b.data
    return Tensor._from_op(x @ y, (a, b), lambda g: (g @ y.T, x.T @ g), "matmul")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, tuple(tensors), backward, "concat")
