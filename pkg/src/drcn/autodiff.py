"""Dense 2-D reverse-mode differentiation on top of numpy.

Every value is a float64 matrix wrapped in a :class:`Node`. Primitives build
the graph eagerly; :func:`backward` walks it once in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    pass


class Node:
    """A matrix value in the computation graph."""

    __slots__ = ("value", "parents", "op", "_vjp", "requires_grad")

    def __init__(self, value, parents: Sequence["Node"] = (), op: str = "leaf",
                 vjp: Callable | None = None, requires_grad: bool = False):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        if value.ndim != 2:
            raise ShapeError(f"expected a 2-D matrix, got shape {value.shape}")
        if not np.isfinite(value).all():
            raise FloatingPointError(f"non-finite values produced by {op!r}")
        self.value = value
        self.parents = tuple(parents)
        self.op = op
        self._vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, as_node(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_node(other))

    def __rsub__(self, other):
        return sub(as_node(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, as_node(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, as_node(other))


def param(value) -> Node:
    """Leaf that participates in differentiation."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True)


def const(value) -> Node:
    return Node(value)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _same_shape(op: str, a: Node, b: Node):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _broadcastable(op: str, a: Node, b: Node):
    # row vectors (1, n) broadcast over rows; scalars (1, 1) over everything
    ok = a.shape == b.shape or b.shape == (1, 1) or a.shape == (1, 1) or (
        b.shape[0] == 1 and b.shape[1] == a.shape[1]) or (
        a.shape[0] == 1 and a.shape[1] == b.shape[1])
    if not ok:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def add(a: Node, b: Node) -> Node:
    _broadcastable("add", a, b)
    return Node(a.value + b.value, (a, b), "add",
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Node, b: Node) -> Node:
    _broadcastable("sub", a, b)
    return Node(a.value - b.value, (a, b), "sub",
                lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Node, b: Node) -> Node:
    """Elementwise product (row-vector and scalar broadcasting allowed)."""
    _broadcastable("mul", a, b)
    av, bv = a.value, b.value
    return Node(av * bv, (a, b), "mul",
                lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return Node(a.value * c, (a,), "scale", lambda g: (g * c,))


def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return Node(av @ bv, (a, b), "matmul", lambda g: (g @ bv.T, av.T @ g))


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return Node(out, (a,), "exp", lambda g: (g * out,))


def log(a: Node) -> Node:
    av = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    return Node(out, (a,), "log", lambda g: (g / av,))


def clamp_min(a: Node, floor: float) -> Node:
    av = a.value
    mask = av > floor
    return Node(np.where(mask, av, floor), (a,), "clamp_min", lambda g: (g * mask,))


def relu(a: Node) -> Node:
    mask = a.value > 0.0  # subgradient 0 at exactly 0
    return Node(a.value * mask, (a,), "relu", lambda g: (g * mask,))


def softmax_rows(a: Node) -> Node:
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return Node(s, (a,), "softmax_rows", vjp)


def sum_all(a: Node) -> Node:
    shape = a.shape
    return Node(a.value.sum().reshape(1, 1), (a,), "sum_all",
                lambda g: (np.full(shape, g[0, 0]),))


def sum_rows(a: Node) -> Node:
    """Sum across columns: (n, m) -> (n, 1)."""
    shape = a.shape
    return Node(a.value.sum(axis=1, keepdims=True), (a,), "sum_rows",
                lambda g: (np.broadcast_to(g, shape).copy(),))


def sum_cols(a: Node) -> Node:
    """Sum down rows: (n, m) -> (1, m)."""
    shape = a.shape
    return Node(a.value.sum(axis=0, keepdims=True), (a,), "sum_cols",
                lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Node) -> Node:
    return scale(sum_all(a), 1.0 / a.value.size)


def transpose(a: Node) -> Node:
    return Node(a.value.T.copy(), (a,), "transpose", lambda g: (g.T,))


def take_rows(a: Node, index) -> Node:
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return Node(a.value[index], (a,), "take_rows", vjp)


def pairwise_sqdist(a: Node, b: Node) -> Node:
    """D[i, j] = ||a_i - b_j||^2, clipped at 0 against cancellation."""
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_sqdist: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    raw = (av * av).sum(1)[:, None] + (bv * bv).sum(1)[None, :] - 2.0 * av @ bv.T
    mask = raw > 0.0
    out = np.where(mask, raw, 0.0)

    def vjp(g):
        g = g * mask
        ga = 2.0 * (g.sum(1)[:, None] * av - g @ bv)
        gb = 2.0 * (g.sum(0)[:, None] * bv - g.T @ av)
        return ga, gb

    return Node(out, (a, b), "pairwise_sqdist", vjp)


def rowwise_sqdist(a: Node, b: Node) -> Node:
    """d[i] = ||a_i - b_i||^2 as an (n, 1) column."""
    _same_shape("rowwise_sqdist", a, b)
    diff = a.value - b.value
    return Node((diff * diff).sum(1, keepdims=True), (a, b), "rowwise_sqdist",
                lambda g: (2.0 * g * diff, -2.0 * g * diff))


class BatchNormState:
    """Running statistics of one batch-normalization layer."""

    def __init__(self, dim: int):
        self.running_mean = np.zeros((1, dim))
        self.running_var = np.ones((1, dim))

    def copy(self) -> "BatchNormState":
        out = BatchNormState(self.running_mean.shape[1])
        out.running_mean = self.running_mean.copy()
        out.running_var = self.running_var.copy()
        return out


def batch_norm(x: Node, gamma: Node, beta: Node, state: BatchNormState,
               train: bool) -> Node:
    """Per-feature batch normalization followed by the affine (gamma, beta).

    In train mode the batch statistics are used and ``state`` is updated in
    place (running variance uses the unbiased batch variance). In eval mode the
    running statistics are used and ``state`` is left untouched.
    """
    n, d = x.shape
    if gamma.shape != (1, d) or beta.shape != (1, d):
        raise ShapeError(f"batch_norm: shape mismatch {x.shape} vs {gamma.shape}/{beta.shape}")
    xv, gv = x.value, gamma.value
    if train:
        if n < 2:
            raise ShapeError("batch_norm: train mode needs at least 2 rows")
        mu = xv.mean(0, keepdims=True)
        var = xv.var(0, keepdims=True)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (xv - mu) * inv
        state.running_mean = (1 - BN_MOMENTUM) * state.running_mean + BN_MOMENTUM * mu
        state.running_var = (1 - BN_MOMENTUM) * state.running_var + BN_MOMENTUM * var * n / (n - 1)

        def vjp(g):
            gxhat = g * gv
            gx = inv / n * (n * gxhat - gxhat.sum(0, keepdims=True)
                            - xhat * (gxhat * xhat).sum(0, keepdims=True))
            return gx, (g * xhat).sum(0, keepdims=True), g.sum(0, keepdims=True)
    else:
        inv = 1.0 / np.sqrt(state.running_var + BN_EPS)
        xhat = (xv - state.running_mean) * inv

        def vjp(g):
            return g * gv * inv, (g * xhat).sum(0, keepdims=True), g.sum(0, keepdims=True)

    return Node(xhat * gv + beta.value, (x, gamma, beta), "batch_norm", vjp)


def _topo(root: Node) -> list[Node]:
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
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Node, leaves: Iterable[Node]) -> dict[int, np.ndarray]:
    """Gradient of the scalar ``root`` with respect to each of ``leaves``.

    Returns a dict keyed by ``id(leaf)``; leaves that ``root`` does not depend
    on get an exactly-zero gradient.
    """
    if root.shape != (1, 1):
        raise ShapeError(f"backward: root must be 1x1, got {root.shape}")
    leaves = list(leaves)
    grads: dict[int, np.ndarray] = {id(root): np.ones((1, 1))}
    for node in reversed(_topo(root)):
        g = grads.pop(id(node), None) if node._vjp is not None else grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64)
    return {id(leaf): grads.get(id(leaf), np.zeros(leaf.shape)) for leaf in leaves}


def grad(root: Node, leaf: Node) -> np.ndarray:
    return backward(root, [leaf])[id(leaf)]
