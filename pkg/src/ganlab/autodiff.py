"""Reverse-mode automatic differentiation over small dense arrays.

Every differentiable quantity in the package is a :class:`Node`.  A node holds
a float64 ``numpy`` value (a 0-d array for scalars), the operation that
produced it and references to its arguments.  Operation nodes are appended to
an arena (:class:`Graph`) in creation order, so the arena order *is* a
topological order and the backward pass is a single reverse sweep.

Leaf nodes (parameters, inputs) are not stored in the arena.  They can be
shared between graphs, which is what lets a network outlive the per-step
graph segments that are truncated after each optimizer step.

The vector-Jacobian products of every op are written with the same public
functions that build the forward graph.  Called with plain arrays they
evaluate numerically; called with nodes they record new graph nodes.  This
is what makes ``grad(..., create_graph=True)`` differentiable a second time,
which the gradient penalties rely on.

Example::

    >>> x = leaf(3.0)
    >>> y = x * x
    >>> backward(y)
    >>> float(x.grad)
    6.0
"""

from __future__ import annotations

import itertools
import threading

import numpy as np

EPS = 1e-12

_ids = itertools.count()


class NonFiniteError(FloatingPointError):
    """A non-finite value reached an operation."""

    def __init__(self, op, node_id, produced=False):
        self.op = op
        self.node_id = node_id
        if produced:
            msg = f"'{op}' produced a non-finite value from finite inputs"
        else:
            where = "a constant argument" if node_id is None else f"node {node_id}"
            msg = f"non-finite input to '{op}' from {where}"
        super().__init__(msg)


class GraphError(RuntimeError):
    pass


class Graph:
    """Arena of operation nodes, in creation (= topological) order.

    ``mark()`` / ``truncate(mark)`` implement per-step checkpoints: truncation
    invalidates exactly the nodes created after the mark.
    """

    _local = threading.local()

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        stack = Graph._stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        Graph._stack().pop()

    @staticmethod
    def _stack():
        stack = getattr(Graph._local, "stack", None)
        if stack is None:
            stack = Graph._local.stack = [Graph()]
        return stack

    @staticmethod
    def current() -> "Graph":
        return Graph._stack()[-1]

    def mark(self) -> int:
        return len(self.nodes)

    def truncate(self, mark: int) -> None:
        for node in self.nodes[mark:]:
            node._pos = -1
            node._args = None
            node._vjps = None
        del self.nodes[mark:]

    def clear(self) -> None:
        self.truncate(0)


class Node:
    """A differentiable value.

    ``grad`` holds d(root)/d(node) after :func:`backward`; nodes that the root
    does not depend on report zeros.
    """

    __slots__ = ("value", "_grad", "op", "_args", "_vjps", "id", "graph", "_pos")
    __array_priority__ = 1000

    def __init__(self, value, op="leaf", args=None, vjps=None, graph=None):
        self.value = value
        self._grad = None
        self.op = op
        self._args = args
        self._vjps = vjps
        self.id = next(_ids)
        self.graph = graph
        if graph is None:
            self._pos = None
        else:
            self._pos = len(graph.nodes)
            graph.nodes.append(self)

    @property
    def parents(self):
        if not self._args:
            return ()
        return tuple(a for a in self._args if isinstance(a, Node))

    @property
    def is_leaf(self):
        return self.op == "leaf"

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self):
        if self._grad is None:
            return np.zeros_like(self.value)
        g = self._grad
        return g.value if isinstance(g, Node) else g

    @grad.setter
    def grad(self, g):
        self._grad = g

    def zero_grad(self):
        self._grad = None

    def item(self):
        return float(self.value)

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op}, shape={self.value.shape})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)


def leaf(value) -> Node:
    """Create a leaf node (parameter or input) holding a float64 copy of ``value``."""
    arr = np.array(value, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteError("leaf", None)
    return Node(arr)


def value_of(x):
    return x.value if type(x) is Node else x


def shape_of(x):
    if type(x) is Node:
        return x.value.shape
    return np.shape(x)


def _apply(op, fwd, vjps, *args):
    """Evaluate ``fwd`` on argument values, recording a node if any argument is a node."""
    for a in args:
        if type(a) is Node:
            break
    else:
        return fwd(*args)
    vals = []
    for a in args:
        if type(a) is Node:
            if a._pos == -1:
                raise GraphError(f"'{op}' received node {a.id} from a truncated graph segment")
            vals.append(a.value)
        else:
            vals.append(a)
    out = np.asarray(fwd(*vals), dtype=np.float64)
    if not np.isfinite(out).all():
        for a, v in zip(args, vals):
            if not np.isfinite(v).all():
                raise NonFiniteError(op, a.id if type(a) is Node else None)
        raise NonFiniteError(op, None, produced=True)
    return Node(out, op, args, vjps, Graph.current())


# ---------------------------------------------------------------------------
# shape plumbing


def sum_to(x, shape):
    """Sum ``x`` down to ``shape`` (inverse of numpy broadcasting)."""
    shape = tuple(shape)
    if shape_of(x) == shape:
        return x

    def fwd(v):
        return _unbroadcast(v, shape)

    xshape = shape_of(x)
    return _apply("sum_to", fwd, (lambda g, out, a: broadcast_to(g, xshape),), x)


def _unbroadcast(v, shape):
    lead = v.ndim - len(shape)
    if lead:
        v = v.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and v.shape[i] != 1)
    if axes:
        v = v.sum(axis=axes, keepdims=True)
    return v.reshape(shape)


def broadcast_to(x, shape):
    shape = tuple(shape)
    if shape_of(x) == shape:
        return x
    xshape = shape_of(x)
    return _apply(
        "broadcast_to",
        lambda v: np.broadcast_to(v, shape).copy(),
        (lambda g, out, a: sum_to(g, xshape),),
        x,
    )


def reshape(x, shape):
    shape = tuple(shape)
    xshape = shape_of(x)
    return _apply(
        "reshape",
        lambda v: np.reshape(v, shape),
        (lambda g, out, a: reshape(g, xshape),),
        x,
    )


def transpose(x):
    return _apply("transpose", np.transpose, (lambda g, out, a: transpose(g),), x)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    return _apply(
        "add",
        np.add,
        (lambda g, out, x, y: sum_to(g, shape_of(x)), lambda g, out, x, y: sum_to(g, shape_of(y))),
        a,
        b,
    )


def sub(a, b):
    return _apply(
        "sub",
        np.subtract,
        (
            lambda g, out, x, y: sum_to(g, shape_of(x)),
            lambda g, out, x, y: neg(sum_to(g, shape_of(y))),
        ),
        a,
        b,
    )


def mul(a, b):
    return _apply(
        "mul",
        np.multiply,
        (
            lambda g, out, x, y: sum_to(mul(g, y), shape_of(x)),
            lambda g, out, x, y: sum_to(mul(g, x), shape_of(y)),
        ),
        a,
        b,
    )


def _guard(v):
    return np.where(np.abs(v) < EPS, np.where(v < 0, -EPS, EPS), v)


def safe_denominator(x):
    """Push |x| up to at least ``EPS``, keeping the sign (derivative 0 where clamped)."""

    def vjp(g, out, a):
        return mul(g, (np.abs(value_of(a)) >= EPS).astype(np.float64))

    return _apply("safe_denominator", _guard, (vjp,), x)


def div(a, b):
    b = safe_denominator(b)
    return _apply(
        "div",
        np.divide,
        (
            lambda g, out, x, y: sum_to(div(g, y), shape_of(x)),
            lambda g, out, x, y: sum_to(neg(mul(g, div(out, y))), shape_of(y)),
        ),
        a,
        b,
    )


def neg(a):
    return _apply("neg", np.negative, (lambda g, out, x: neg(g),), a)


def matmul(a, b):
    return _apply(
        "matmul",
        np.matmul,
        (
            lambda g, out, x, y: matmul(g, transpose(y)),
            lambda g, out, x, y: matmul(transpose(x), g),
        ),
        a,
        b,
    )


def square(a):
    """Elementwise x**2 (the ``pow2`` op)."""
    return _apply("pow2", np.square, (lambda g, out, x: mul(g, mul(2.0, x)),), a)


pow2 = square


def clamp_min(a, floor):
    def vjp(g, out, x):
        return mul(g, (value_of(x) > floor).astype(np.float64))

    return _apply("clamp_min", lambda v: np.maximum(v, floor), (vjp,), a)


def clip(a, lo, hi):
    def vjp(g, out, x):
        v = value_of(x)
        return mul(g, ((v > lo) & (v < hi)).astype(np.float64))

    return _apply("clip", lambda v: np.clip(v, lo, hi), (vjp,), a)


# ---------------------------------------------------------------------------
# elementwise functions


def exp(a):
    return _apply("exp", np.exp, (lambda g, out, x: mul(g, out),), a)


def _log(a):
    return _apply("log", np.log, (lambda g, out, x: div(g, x),), a)


def log(a):
    """Natural log with arguments floored at ``EPS``."""
    return _log(clamp_min(a, EPS))


def _sqrt(a):
    return _apply("sqrt", np.sqrt, (lambda g, out, x: div(g, mul(2.0, out)),), a)


def sqrt(a):
    """Square root with arguments floored at ``EPS``."""
    return _sqrt(clamp_min(a, EPS))


def absolute(a):
    return _apply("abs", np.abs, (lambda g, out, x: mul(g, np.sign(value_of(x))),), a)


def relu(a):
    def vjp(g, out, x):
        return mul(g, (value_of(x) > 0).astype(np.float64))

    return _apply("relu", lambda v: np.maximum(v, 0.0), (vjp,), a)


def leaky_relu(a, slope=0.2):
    def fwd(v):
        return np.where(v > 0, v, slope * v)

    def vjp(g, out, x):
        return mul(g, np.where(value_of(x) > 0, 1.0, slope))

    return _apply("leaky_relu", fwd, (vjp,), a)


def _sigmoid(v):
    # split by sign so neither branch overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a):
    def fwd(v):
        v = np.asarray(v, dtype=np.float64)
        return _sigmoid(v.reshape(-1)).reshape(v.shape)

    def vjp(g, out, x):
        return mul(g, mul(out, sub(1.0, out)))

    return _apply("sigmoid", fwd, (vjp,), a)


def tanh(a):
    return _apply("tanh", np.tanh, (lambda g, out, x: mul(g, sub(1.0, square(out))),), a)


# ---------------------------------------------------------------------------
# reductions


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    xshape = shape_of(a)

    def vjp(g, out, x):
        if axis is None:
            kept = (1,) * len(xshape)
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            axes = {ax % len(xshape) for ax in axes}
            kept = tuple(1 if i in axes else n for i, n in enumerate(xshape))
        if not keepdims:
            g = reshape(g, kept)
        return broadcast_to(g, xshape)

    return _apply("sum", lambda v: np.sum(v, axis=axis, keepdims=keepdims), (vjp,), a)


def mean(a, axis=None, keepdims=False):
    size = np.size(value_of(a)) if axis is None else np.shape(value_of(a))[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / size)


# ---------------------------------------------------------------------------
# differentiation


def _segment(root):
    if not isinstance(root, Node):
        raise GraphError("root is not a node")
    if root.is_leaf:
        return []
    if root._pos == -1 or root.graph is None:
        raise GraphError(f"root node {root.id} belongs to a truncated graph segment")
    return root.graph.nodes[: root._pos + 1]


def backward(root: Node) -> None:
    """Populate ``.grad`` of every node the scalar ``root`` depends on."""
    if root.value.size != 1:
        raise ValueError("backward() needs a scalar root")
    nodes = _segment(root)
    for node in nodes:
        node._grad = None
        for a in node._args:
            if isinstance(a, Node):
                a._grad = None
    root._grad = np.ones_like(root.value)
    for node in reversed(nodes):
        g = node._grad
        if g is None:
            continue
        args = node._args
        vals = [value_of(a) for a in args]
        for a, fn in zip(args, node._vjps):
            if isinstance(a, Node):
                ga = fn(g, node.value, *vals)
                a._grad = ga if a._grad is None else a._grad + ga


def grad(root: Node, inputs, create_graph: bool = False):
    """Return d(root)/d(input) for each input without touching ``.grad``.

    With ``create_graph=True`` the returned gradients are nodes recorded in
    the current graph, so a loss built from them can be differentiated again.
    """
    inputs = list(inputs)
    nodes = _segment(root)
    if not nodes:
        raise GraphError("root is a leaf")
    # forward reachability from the inputs prunes the sweep to paths that matter
    live = {x.id for x in inputs}
    referenced = set()
    for node in nodes:
        for a in node._args:
            if isinstance(a, Node) and a.id in live:
                referenced.add(a.id)
                live.add(node.id)
    for x in inputs:
        if x.id not in referenced and x.id != root.id:
            raise GraphError(f"input node {x.id} is not part of the graph of root {root.id}")
    if root.id not in live:
        return [np.zeros_like(x.value) for x in inputs]

    wanted = {x.id for x in inputs}
    adj = {root.id: np.ones_like(root.value)}
    for node in reversed(nodes):
        g = adj.get(node.id) if node.id in wanted else adj.pop(node.id, None)
        if g is None:
            continue
        args = node._args
        call = args if create_graph else [value_of(a) for a in args]
        out = node if create_graph else node.value
        for a, fn in zip(args, node._vjps):
            if isinstance(a, Node) and a.id in live:
                ga = fn(g, out, *call)
                prev = adj.get(a.id)
                adj[a.id] = ga if prev is None else add(prev, ga)
    result = []
    for x in inputs:
        g = adj.get(x.id)
        if g is None:
            g = np.zeros_like(x.value)
        result.append(g)
    return result


grad_of_inputs = grad
