"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Node` wraps a float64 ndarray together with the closure that pushes
its gradient back to its parents.  Graphs are built eagerly by calling the
functions in this module (or the operator overloads on ``Node``) and are
differentiated with :func:`backward`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes cannot be combined."""


class Node:
    """A value in a differentiable computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, value, parents: Sequence["Node"] = (), backward=None,
                 requires_grad: bool | None = None, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self._parents)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Node{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
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
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


class Parameter(Node):
    """A leaf node that always receives a gradient."""

    __slots__ = ()

    def __init__(self, value, name: str | None = None):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x, requires_grad=False)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _make(value, parents: Iterable[Node], backward) -> Node:
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Node(value, requires_grad=False)
    return Node(value, parents, backward, requires_grad=True)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Node, b: Node) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from exc


def _accumulate(node: Node, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    # never mutate in place: the same array may be handed to several parents
    if node.grad is None:
        node.grad = g if g.shape == node.shape else np.broadcast_to(g, node.shape)
    else:
        node.grad = node.grad + g


# ---------------------------------------------------------------------------
# elementwise binary ops


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), backward)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.value - b.value, (a, b), backward)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.value, b.shape))

    return _make(a.value * b.value, (a, b), backward)


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b)
    out = a.value / b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.value, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * out / b.value, b.shape))

    return _make(out, (a, b), backward)


def elementwise(op: str, a, b) -> Node:
    """Dispatch a binary elementwise op by tag (``add``, ``sub``, ``mul``, ``div``)."""
    table = {"add": add, "sub": sub, "mul": mul, "div": div}
    try:
        fn = table[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


# ---------------------------------------------------------------------------
# unary ops


def _unary(x, value: np.ndarray, local: Callable[[], np.ndarray]) -> Node:
    x = as_node(x)

    def backward(g):
        _accumulate(x, g * local())

    return _make(value, (x,), backward)


def neg(x) -> Node:
    x = as_node(x)
    return _make(-x.value, (x,), lambda g: _accumulate(x, -g))


def power(x, exponent: float) -> Node:
    x = as_node(x)
    return _unary(x, x.value ** exponent, lambda: exponent * x.value ** (exponent - 1))


def square(x) -> Node:
    x = as_node(x)
    return _unary(x, x.value * x.value, lambda: 2.0 * x.value)


def sqrt(x) -> Node:
    x = as_node(x)
    out = np.sqrt(x.value)
    return _unary(x, out, lambda: 0.5 / out)


def exp(x) -> Node:
    x = as_node(x)
    out = np.exp(x.value)
    return _unary(x, out, lambda: out)


def expm1(x) -> Node:
    x = as_node(x)
    out = np.expm1(x.value)
    return _unary(x, out, lambda: out + 1.0)


def log(x) -> Node:
    x = as_node(x)
    return _unary(x, np.log(x.value), lambda: 1.0 / x.value)


def sigmoid(x) -> Node:
    x = as_node(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _unary(x, out, lambda: out * (1.0 - out))


def tanh(x) -> Node:
    x = as_node(x)
    out = np.tanh(x.value)
    return _unary(x, out, lambda: 1.0 - out * out)


def softplus(x) -> Node:
    x = as_node(x)
    v = x.value
    out = np.logaddexp(0.0, v)
    return _unary(x, out, lambda: 0.5 * (1.0 + np.tanh(0.5 * v)))


def silu(x) -> Node:
    x = as_node(x)
    v = x.value
    s = 0.5 * (1.0 + np.tanh(0.5 * v))
    return _unary(x, v * s, lambda: s * (1.0 + v * (1.0 - s)))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x) -> Node:
    """GELU, tanh approximation."""
    x = as_node(x)
    v = x.value
    inner = _GELU_C * (v + 0.044715 * v * v * v)
    th = np.tanh(inner)
    out = 0.5 * v * (1.0 + th)

    def local():
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * d_inner

    return _unary(x, out, local)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def sum(x, axis=None, keepdims: bool = False) -> Node:  # noqa: A001 - mirrors numpy
    x = as_node(x)
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _make(out, (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Node:
    x = as_node(x)
    n = x.value.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(x, shape) -> Node:
    x = as_node(x)
    return _make(x.value.reshape(shape), (x,), lambda g: _accumulate(x, g.reshape(x.shape)))


def transpose(x, axes=None) -> Node:
    x = as_node(x)
    out = np.transpose(x.value, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (x,), lambda g: _accumulate(x, np.transpose(g, inv)))


def swapaxes(x, a1: int, a2: int) -> Node:
    x = as_node(x)
    return _make(np.swapaxes(x.value, a1, a2), (x,),
                 lambda g: _accumulate(x, np.swapaxes(g, a1, a2)))


def flip(x, axis: int) -> Node:
    x = as_node(x)
    return _make(np.flip(x.value, axis), (x,), lambda g: _accumulate(x, np.flip(g, axis)))


def getitem(x, index) -> Node:
    x = as_node(x)

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in parts)

    def backward(g):
        full = np.zeros(x.shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        _accumulate(x, full)

    return _make(x.value[index], (x,), backward)


def take(x, indices, axis: int) -> Node:
    """Gather along ``axis``; ``indices`` should be a permutation or subset."""
    x = as_node(x)
    indices = np.asarray(indices)
    unique = np.unique(indices).size == indices.size

    def backward(g):
        full = np.zeros(x.shape)
        moved = np.moveaxis(full, axis, 0)
        if unique:
            moved[indices] = np.moveaxis(g, axis, 0)
        else:
            np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        _accumulate(x, full)

    return _make(np.take(x.value, indices, axis=axis), (x,), backward)


def split(x, sections: int, axis: int = -1) -> list[Node]:
    x = as_node(x)
    size = x.shape[axis] // sections
    if size * sections != x.shape[axis]:
        raise ShapeError(f"axis of length {x.shape[axis]} not divisible into {sections}")
    out = []
    for i in range(sections):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(i * size, (i + 1) * size)
        out.append(getitem(x, tuple(sl)))
    return out


def concat(nodes: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    out = np.concatenate([n.value for n in nodes], axis=axis)
    bounds = np.cumsum([0] + [n.shape[axis] for n in nodes])

    def backward(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(n, g[tuple(sl)])

    return _make(out, nodes, backward)


def shift(x, offset: int, axis: int) -> Node:
    """Delay ``x`` by ``offset`` positions along ``axis``; vacated slots are zero."""
    x = as_node(x)
    if offset == 0:
        return x
    n = x.shape[axis]
    out = np.zeros(x.shape)
    if offset < n:
        dst = [slice(None)] * x.ndim
        src = [slice(None)] * x.ndim
        dst[axis] = slice(offset, None)
        src[axis] = slice(0, n - offset)
        out[tuple(dst)] = x.value[tuple(src)]

    def backward(g):
        full = np.zeros(x.shape)
        if offset < n:
            full[tuple(src)] = g[tuple(dst)]
        _accumulate(x, full)

    return _make(out, (x,), backward)


def pad_axis(x, before: int, after: int, axis: int) -> Node:
    x = as_node(x)
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    out = np.pad(x.value, widths)
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(before, before + x.shape[axis])
    return _make(out, (x,), lambda g: _accumulate(x, g[tuple(sl)]))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError("matmul requires at least 1-d operands")
    if b.ndim == 1:
        raise ShapeError("right matmul operand must be at least 2-d")
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[:-2] + (b.shape[-1],))
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.value @ b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape))

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------------------
# custom primitives


def linear_recurrence(a, b, axis: int = 0) -> Node:
    """h_k = a_k * h_{k-1} + b_k along ``axis`` with h_{-1} = 0.

    All arrays share one shape.  The backward pass is the reversed recurrence
    g~_k = g_k + a_{k+1} g~_{k+1}; grad_b = g~, grad_a_k = g~_k h_{k-1}.
    """
    a, b = as_node(a), as_node(b)
    if a.shape != b.shape:
        a_val = np.broadcast_to(a.value, _broadcast_shape(a, b))
        b_val = np.broadcast_to(b.value, a_val.shape)
    else:
        a_val, b_val = a.value, b.value
    av = np.moveaxis(a_val, axis, 0)
    bv = np.moveaxis(b_val, axis, 0)
    h = np.empty(av.shape)
    h[0] = bv[0]
    for k in range(1, h.shape[0]):
        np.multiply(av[k], h[k - 1], out=h[k])
        h[k] += bv[k]
    out = np.moveaxis(h, 0, axis)

    def backward(g):
        gv = np.moveaxis(g, axis, 0)
        acc = np.empty(gv.shape)
        acc[-1] = gv[-1]
        for k in range(gv.shape[0] - 2, -1, -1):
            np.multiply(av[k + 1], acc[k + 1], out=acc[k])
            acc[k] += gv[k]
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.moveaxis(acc, 0, axis), b.shape))
        if a.requires_grad:
            ga = np.zeros(gv.shape)
            ga[1:] = acc[1:] * h[:-1]
            _accumulate(a, _unbroadcast(np.moveaxis(ga, 0, axis), a.shape))

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------------------
# backward pass


def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
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


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every reachable node."""
    if root.value.size != 1:
        raise ShapeError(f"backward requires a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topological(root)
    # intermediate grads are released once propagated; leaves keep theirs
    _accumulate(root, np.ones(root.shape))
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        if node._parents:
            node.grad = None


def grad_of(fn: Callable[..., Node], *args: np.ndarray) -> list[np.ndarray]:
    """Evaluate ``fn`` on fresh parameters built from ``args`` and return their gradients."""
    params = [Parameter(np.array(a, dtype=np.float64)) for a in args]
    out = fn(*params)
    backward(out)
    return [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
