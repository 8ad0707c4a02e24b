"""Minimal reverse-mode automatic differentiation over numpy arrays.

Each op builds a Node holding the forward value and a closure that routes
the output adjoint to the inputs. backward() runs the closures in reverse
topological order. Values are float64 arrays of ndim 0, 1 or 2; scalars
are 0-d arrays. Only nodes reachable from a parameter carry gradients.

Forward values are computed with the same numkernel primitives the rest
of the package uses, so evaluating a graph with constant leaves gives the
exact inference-path numbers.
"""

from __future__ import annotations

import numpy as np

from . import numkernel as nk
from .errors import ShapeError

# Guard for backward rules with a removable singularity (sqrt at 0).
TINY = 1e-24


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "needs_grad")

    def __init__(self, value, parents=(), backward_fn=None, needs_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.needs_grad = needs_grad or any(p.needs_grad for p in parents)


def const(value) -> Node:
    return Node(value)


def param(value) -> Node:
    return Node(value, needs_grad=True)


def _accum(node: Node, g: np.ndarray) -> None:
    if node.needs_grad:
        node.grad += g


def backward(root: Node) -> None:
    """Accumulate gradients of a scalar root into every reachable node."""
    if root.value.ndim != 0:
        raise ShapeError("backward expects a scalar root")
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.needs_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    for node in order:
        node.grad = np.zeros_like(node.value)
    if root.needs_grad:
        root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is not None:
            node.backward_fn(node.grad)


# ---------------------------------------------------------------- arithmetic


def matmul(a: Node, b: Node) -> Node:
    out_value = nk.matmul(a.value, b.value)

    def bw(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return Node(out_value, (a, b), bw)


def transpose(a: Node) -> Node:
    def bw(g):
        _accum(a, g.T)

    return Node(a.value.T, (a,), bw)


def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return Node(a.value + b.value, (a, b), bw)


def add_bias(m: Node, bias: Node) -> Node:
    """Matrix plus a row vector broadcast over rows."""
    if m.value.ndim != 2 or bias.value.ndim != 1 or m.value.shape[1] != bias.value.shape[0]:
        raise ShapeError(f"add_bias shapes: {m.value.shape} vs {bias.value.shape}")

    def bw(g):
        _accum(m, g)
        _accum(bias, g.sum(axis=0))

    return Node(m.value + bias.value[None, :], (m, bias), bw)


def sub(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"sub shape mismatch: {a.value.shape} vs {b.value.shape}")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return Node(a.value - b.value, (a, b), bw)


def mul(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul shape mismatch: {a.value.shape} vs {b.value.shape}")

    def bw(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)

    return Node(a.value * b.value, (a, b), bw)


def div(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"div shape mismatch: {a.value.shape} vs {b.value.shape}")
    out_value = a.value / b.value

    def bw(g):
        _accum(a, g / b.value)
        _accum(b, -g * out_value / b.value)

    return Node(out_value, (a, b), bw)


def scale(a: Node, c: float) -> Node:
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return Node(a.value * c, (a,), bw)


def neg(a: Node) -> Node:
    return scale(a, -1.0)


# ---------------------------------------------------------------- reductions


def sum_all(a: Node) -> Node:
    def bw(g):
        _accum(a, np.full_like(a.value, float(g)))

    return Node(a.value.sum(), (a,), bw)


def mean_all(a: Node) -> Node:
    n = a.value.size

    def bw(g):
        _accum(a, np.full_like(a.value, float(g) / n))

    return Node(a.value.mean(), (a,), bw)


def mean_rows(m: Node) -> Node:
    """Column means of a matrix: the average row as a vector."""
    if m.value.ndim != 2:
        raise ShapeError("mean_rows needs a matrix")
    rows = m.value.shape[0]

    def bw(g):
        _accum(m, np.broadcast_to(g[None, :] / rows, m.value.shape).copy())

    return Node(m.value.mean(axis=0), (m,), bw)


def column_sum(m: Node) -> Node:
    out_value = nk.column_sum(m.value)

    def bw(g):
        _accum(m, np.broadcast_to(g[None, :], m.value.shape).copy())

    return Node(out_value, (m,), bw)


def row_sums(m: Node) -> Node:
    """Per-row sums of a matrix as a vector."""
    if m.value.ndim != 2:
        raise ShapeError("row_sums needs a matrix")

    def bw(g):
        _accum(m, np.broadcast_to(g[:, None], m.value.shape).copy())

    return Node(m.value.sum(axis=1), (m,), bw)


def row_scale(m: Node, w: Node) -> Node:
    """Multiply row t of m by w[t]."""
    out_value = nk.row_scale(m.value, w.value)

    def bw(g):
        _accum(m, g * w.value[:, None])
        _accum(w, (g * m.value).sum(axis=1))

    return Node(out_value, (m, w), bw)


# ------------------------------------------------------------- nonlinearities


def softmax_vec(v: Node) -> Node:
    s = nk.softmax_vector(v.value)

    def bw(g):
        _accum(v, s * (g - np.dot(g, s)))

    return Node(s, (v,), bw)


def scaled_softmax_vec(v: Node, c: float) -> Node:
    """c * softmax(v) in one step; see numkernel.scaled_softmax_vector."""
    c = float(c)
    w = nk.scaled_softmax_vector(v.value, c)
    s = w / c

    def bw(g):
        gc = g * c
        _accum(v, s * (gc - np.dot(gc, s)))

    return Node(w, (v,), bw)


def row_softmax(m: Node) -> Node:
    """Softmax independently over each row of a matrix."""
    if m.value.ndim != 2:
        raise ShapeError("row_softmax needs a matrix")
    shifted = m.value - m.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        _accum(m, s * (g - (g * s).sum(axis=1, keepdims=True)))

    return Node(s, (m,), bw)


def sigmoid(x: Node) -> Node:
    if x.value.ndim != 0:
        raise ShapeError("sigmoid op expects a scalar node")
    s = nk.sigmoid(float(x.value))

    def bw(g):
        _accum(x, g * s * (1.0 - s))

    return Node(s, (x,), bw)


def log(x: Node) -> Node:
    def bw(g):
        _accum(x, g / x.value)

    return Node(np.log(x.value), (x,), bw)


def absolute(x: Node) -> Node:
    def bw(g):
        _accum(x, g * np.sign(x.value))

    return Node(np.abs(x.value), (x,), bw)


def square(x: Node) -> Node:
    def bw(g):
        _accum(x, g * 2.0 * x.value)

    return Node(np.square(x.value), (x,), bw)


def sqrt_guarded(x: Node) -> Node:
    """Elementwise sqrt whose gradient is zero where x is (near) zero."""
    root = np.sqrt(np.maximum(x.value, 0.0))

    def bw(g):
        safe = np.where(x.value > TINY, root, 1.0)
        _accum(x, np.where(x.value > TINY, g / (2.0 * safe), 0.0))

    return Node(root, (x,), bw)


def clip_min(x: Node, lo: float) -> Node:
    """max(x, lo); gradient passes through only where x was not clipped."""
    lo = float(lo)
    mask = x.value >= lo

    def bw(g):
        _accum(x, np.where(mask, g, 0.0))

    return Node(np.maximum(x.value, lo), (x,), bw)


# ------------------------------------------------------------- restructuring


def concat_cols(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[0] != b.value.shape[0]:
        raise ShapeError(f"concat_cols shapes: {a.value.shape} vs {b.value.shape}")
    ca = a.value.shape[1]

    def bw(g):
        _accum(a, g[:, :ca])
        _accum(b, g[:, ca:])

    return Node(np.hstack([a.value, b.value]), (a, b), bw)


def rows(m: Node, start: int, stop: int) -> Node:
    """Contiguous row slice m[start:stop]."""
    if m.value.ndim != 2:
        raise ShapeError("rows needs a matrix")

    def bw(g):
        if m.needs_grad:
            m.grad[start:stop] += g

    return Node(m.value[start:stop], (m,), bw)


def pick(v: Node, index: int) -> Node:
    if v.value.ndim != 1:
        raise ShapeError("pick needs a vector")

    def bw(g):
        if v.needs_grad:
            v.grad[index] += float(g)

    return Node(v.value[index], (v,), bw)


def detach(x: Node) -> Node:
    """Same value, but gradients stop here."""
    return Node(x.value)


def mean_of(nodes: list[Node]) -> Node:
    """Mean of scalar nodes."""
    if not nodes:
        raise ShapeError("mean_of needs at least one node")
    total = nodes[0]
    for n in nodes[1:]:
        total = add(total, n)
    return scale(total, 1.0 / len(nodes))
