"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation returns a new :class:`Tensor`. When at least one input
requires a gradient, the result records its parents and a closure mapping
the output gradient to one gradient per parent. :func:`backward` walks the
recorded graph in reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class GraphError(RuntimeError):
    """Raised on misuse of the differentiation graph."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

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

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite output from {op}")


def make_result(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of ``op``.

    ``grad_fn(g)`` must return one array (or ``None``) per parent, each with
    that parent's shape. Custom operations outside this module build on this.
    """
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == DTYPE else data.astype(DTYPE)
    out.grad = None
    out._consumed = False
    out.name = None
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = grad_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _broadcast_ok(a: tuple, b: tuple) -> bool:
    # only leading extents may be broadcast: the shorter shape is a suffix of the longer
    if a == b:
        return True
    short, long = (a, b) if len(a) <= len(b) else (b, a)
    return long[len(long) - len(short):] == short


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    # matmul batch dims may be 1 in the operand
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary_operands(x, y, op: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(x), as_tensor(y)
    if not _broadcast_ok(a.shape, b.shape):
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


# ---------------------------------------------------------------------------
# elementwise

def add(x, y) -> Tensor:
    a, b = _binary_operands(x, y, "add")
    return make_result(a.data + b.data, (a, b),
                       lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(x, y) -> Tensor:
    a, b = _binary_operands(x, y, "sub")
    return make_result(a.data - b.data, (a, b),
                       lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(x, y) -> Tensor:
    a, b = _binary_operands(x, y, "mul")
    return make_result(a.data * b.data, (a, b),
                       lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
                       "mul")


def negate(x) -> Tensor:
    a = as_tensor(x)
    return make_result(-a.data, (a,), lambda g: (-g,), "negate")


def sigmoid(x) -> Tensor:
    a = as_tensor(x)
    out = np.empty_like(a.data)
    # the ratio form only where exp(-x) could overflow
    pos = a.data >= -30.0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x) -> Tensor:
    a = as_tensor(x)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu6(x) -> Tensor:
    a = as_tensor(x)
    out = np.clip(a.data, 0.0, 6.0)
    # subgradient 0 at both kinks
    mask = (a.data > 0.0) & (a.data < 6.0)
    return make_result(out, (a,), lambda g: (g * mask,), "relu6")


def clamp(x, lo: float, hi: float) -> Tensor:
    a = as_tensor(x)
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return make_result(out, (a,), lambda g: (g * mask,), "clamp")


def log(x) -> Tensor:
    a = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return make_result(out, (a,), lambda g: (g / a.data,), "log")


def exp(x) -> Tensor:
    a = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "tanh": tanh,
    "relu6": relu6, "log": log, "exp": exp, "negate": negate,
}


def elementwise(kind: str, x, y=None) -> Tensor:
    """Dispatch an elementwise operation by name."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    if kind in ("add", "sub", "mul"):
        if y is None:
            raise ValueError(f"{kind} needs two operands")
        return fn(x, y)
    return fn(x)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(x, y) -> Tensor:
    """Matrix product over the last two axes; leading extents may broadcast."""
    a, b = as_tensor(x), as_tensor(y)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner extents differ {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def grad_fn(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), grad_fn, "matmul")


def outer(x, y) -> Tensor:
    """``out[..., i, j] = u[..., i] * v[..., j]``."""
    u, v = as_tensor(x), as_tensor(y)
    if u.ndim < 1 or v.ndim < 1 or u.shape[:-1] != v.shape[:-1]:
        raise ValueError(f"outer: incompatible shapes {u.shape}, {v.shape}")
    out = u.data[..., :, None] * v.data[..., None, :]

    def grad_fn(g):
        return (g * v.data[..., None, :]).sum(-1), (g * u.data[..., :, None]).sum(-2)

    return make_result(out, (u, v), grad_fn, "outer")


# ---------------------------------------------------------------------------
# reductions

def _normalize_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for rank {ndim}")
        norm.append(ax % ndim)
    return tuple(sorted(norm))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(x)
    axes = _normalize_axis(axis, a.ndim)
    out = np.asarray(a.data.sum(axis=axes, keepdims=keepdims))

    def grad_fn(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result(out, (a,), grad_fn, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(x)
    axes = _normalize_axis(axis, a.ndim)
    count = a.data.size if axes is None else int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axes, keepdims), 1.0 / count)


def log_softmax(x) -> Tensor:
    a = as_tensor(x)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def grad_fn(g):
        soft = np.exp(out)
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return make_result(out, (a,), grad_fn, "log_softmax")


def reduce(kind: str, x, axis=None) -> Tensor:
    if kind == "sum":
        return sum(x, axis)
    if kind == "mean":
        return mean(x, axis)
    if kind == "log_softmax":
        if axis not in (None, -1, as_tensor(x).ndim - 1):
            raise ValueError("log_softmax runs over the last axis only")
        return log_softmax(x)
    raise ValueError(f"unknown reduction {kind!r}")


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(x, shape) -> Tensor:
    a = as_tensor(x)
    out = a.data.reshape(shape)
    return make_result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    a = as_tensor(x)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inverse = np.argsort(axes)
    out = np.transpose(a.data, axes)
    return make_result(out, (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def swap_last(x) -> Tensor:
    a = as_tensor(x)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def getitem(x, index) -> Tensor:
    a = as_tensor(x)
    out = np.array(a.data[index])

    def grad_fn(g):
        full = np.zeros_like(a.data)
        if _is_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return make_result(out, (a,), grad_fn, "getitem")


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ValueError("concat of an empty list")
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, parts, grad_fn, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out = np.stack([p.data for p in parts], axis=axis)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return make_result(out, parts, grad_fn, "stack")


def detach(x) -> Tensor:
    """Same values, no path back to ``x``."""
    a = as_tensor(x)
    return Tensor(a.data.copy())


# ---------------------------------------------------------------------------
# backward

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Back-propagate from a scalar ``loss``.

    Leaf gradients are accumulated into ``.grad``. The graph is consumed: a
    second call on the same loss raises :class:`GraphError`. Returns a map
    from leaf to gradient; leaves in ``wrt`` that the loss does not reach map
    to zeros.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed; run the forward pass again")
    grads: dict[int, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones((), dtype=DTYPE)
        for node in reversed(_topological_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                leaves[id(node)] = node
                grads[id(node)] = g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._parents = ()
            node._backward = None
            node._consumed = True
            node.requires_grad = False
    loss._consumed = True

    result: dict[Tensor, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        result[leaf] = g
    if wrt is not None:
        for t in wrt:
            if t not in result:
                result[t] = np.zeros_like(t.data)
    return result

