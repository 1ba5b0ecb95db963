"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation appends a :class:`Node` to the graph.  Nodes
carry a monotonically increasing index, so a backward pass only has to sort
the reachable nodes by index (descending) to obtain a valid reverse
topological order.  Graphs are rebuilt on every forward pass.

Broadcasting is deliberately narrow: a binary op accepts equal shapes, a
single-element operand against anything, or a trailing row vector ``[n]``
against a matrix ``[m x n]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

_node_ids = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass(eq=False)
class Node:
    """One recorded operation: kind, inputs, and the closure computing input grads."""

    op: str
    inputs: tuple["Tensor", ...]
    backward: BackwardFn
    index: int


class Tensor:
    """Row-major float64 array that can participate in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None
        self.name = name

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Return a graph-free copy that never receives gradient."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take_rows(self, index)

    def sum(self, axis: int | None = None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return tmean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    out = Tensor(out_data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, inputs, fn, next(_node_ids))
    return out


def record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Register a custom differentiable op whose backward maps out-grad to input grads."""
    return _record(op, np.asarray(out_data, dtype=np.float64), tuple(inputs), backward_fn)


# -- broadcasting -------------------------------------------------------------


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if a.size == 1:
        return sb
    if b.size == 1:
        return sa
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return sa
    if len(sb) == 2 and len(sa) == 1 and sb[1] == sa[0]:
        return sb
    raise DimensionError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if int(np.prod(shape, dtype=np.int64)) == 1:
        return np.reshape(g.sum(), shape)
    # row vector broadcast across matrix rows
    return g.sum(axis=0).reshape(shape)


def _operand_data(t: Tensor, shape: tuple[int, ...]) -> np.ndarray:
    # single-element tensors of shape (1,) or (1, 1) broadcast as scalars
    if t.size == 1 and t.shape != shape:
        return t.data.reshape(())
    return t.data


# -- binary elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    shape = _broadcast_shape(a, b, "add")
    out = _operand_data(a, shape) + _operand_data(b, shape)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    shape = _broadcast_shape(a, b, "sub")
    out = _operand_data(a, shape) - _operand_data(b, shape)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    shape = _broadcast_shape(a, b, "mul")
    ad, bd = _operand_data(a, shape), _operand_data(b, shape)
    out = ad * bd

    def bw(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _record("mul", out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    shape = _broadcast_shape(a, b, "div")
    ad, bd = _operand_data(a, shape), _operand_data(b, shape)
    if np.any(bd == 0.0):
        raise DomainError("div: division by zero")
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, a.shape), _unbroadcast(-g * ad / (bd * bd), b.shape)

    return _record("div", out, (a, b), bw)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


# -- unary elementwise ------------------------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: input contains non-positive values")
    x = a.data
    return _record("log", np.log(x), (a,), lambda g: (g / x,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt: input contains negative values")
    out = np.sqrt(a.data)
    return _record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    return _record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0.0, 1.0, slope)
    return _record("leaky_relu", a.data * factor, (a,), lambda g: (g * factor,))


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def stable_softplus(x: np.ndarray) -> np.ndarray:
    """``log(1 + exp(x))`` evaluated as ``max(x, 0) + log1p(exp(-|x|))``."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = stable_sigmoid(a.data)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _record("softplus", stable_softplus(x), (a,), lambda g: (g * stable_sigmoid(x),))


# -- linear algebra / reductions / structure ---------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return _record("matmul", ad @ bd, (a, b), bw)


def _check_axis(t: Tensor, axis: int | None, op: str) -> None:
    if axis is not None and not (0 <= axis < t.ndim):
        raise DimensionError(f"{op}: axis {axis} invalid for shape {t.shape}")


def tsum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis, "sum")
    shape = a.shape
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record("sum", out, (a,), bw)


def tmean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis, "mean")
    count = a.size if axis is None else a.shape[axis]
    shape = a.shape
    out = a.data.mean(axis=axis)

    def bw(g):
        g = g / count
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record("mean", out, (a,), bw)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Stack matrices with equal column counts along axis 0."""
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise DimensionError("concat: no inputs")
    cols = {t.shape[1:] for t in tensors}
    if len(cols) != 1:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])

    def bw(g):
        return tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _record("concat", np.concatenate([t.data for t in tensors], axis=0), tensors, bw)


def take_rows(a, index) -> Tensor:
    """Row selection by slice or integer index array."""
    a = as_tensor(a)
    if isinstance(index, tuple):
        raise DimensionError("take_rows: only first-axis indexing is supported")
    out = a.data[index]
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        if isinstance(index, slice):
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _record("take_rows", out, (a,), bw)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {orig} as {tuple(shape)}") from exc
    return _record("reshape", out, (a,), lambda g: (g.reshape(orig),))


# -- backward ---------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    The seed gradient is 1.  Nodes are visited in strict reverse creation order.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a single-element loss, got shape {loss.shape}")
    if loss.node is None:
        raise ContractError("backward called on a tensor with no recorded graph")

    nodes: dict[int, tuple[Node, Tensor]] = {}
    stack = [loss]
    seen: set[int] = set()
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t.node is not None:
            nodes[t.node.index] = (t.node, t)
            stack.extend(i for i in t.node.inputs if i.requires_grad)

    pending: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for index in sorted(nodes, reverse=True):
        node, out = nodes[index]
        g = pending.pop(id(out), None)
        if g is None:
            continue
        out.grad = g if out.grad is None else out.grad + g
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                prev = pending.get(id(inp))
                pending[id(inp)] = gi if prev is None else prev + gi
