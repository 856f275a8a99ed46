"""Reverse-mode automatic differentiation over dense 2-D float64 matrices.

Every value in the graph is a 2-D numpy array: scalars are 1x1, row
vectors 1xD, column vectors Nx1.  A :class:`Node` carries the value, an
accumulated gradient of identical shape, the operation tag, and
vector-Jacobian-product closures for its parents.  :func:`backprop` walks
the graph once in reverse topological order, computing fresh adjoints for
the pass and adding them into ``node.grad`` — so running it twice without
zeroing accumulates exactly twice the gradient.

The op set is deliberately small: just what the projection networks, the
multigraph construction, the message-passing layers, and the losses need.
"""

import math

import numpy as np

from .errors import ShapeError

__all__ = [
    "Node",
    "Parameter",
    "BatchNormState",
    "constant",
    "make_node",
    "backprop",
    "gradients",
    "zero_grad",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "transpose",
    "relu",
    "leaky_relu",
    "sigmoid",
    "absval",
    "sqrt",
    "summation",
    "mean",
    "trace",
    "scale",
    "concat_cols",
    "concat_rows",
    "gather_rows",
    "entry",
    "softmax_rows",
    "log_softmax_rows",
    "fsum_scalars",
    "batchnorm",
    "fan_in_uniform",
]


def as_matrix(x):
    """Coerce to a 2-D float64 array (scalars become 1x1)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError("as_matrix", a.shape)
    return a


class Node:
    """One vertex of the computation graph.

    ``grad`` always has the same shape as ``value`` and starts at zero;
    it only changes through :func:`backprop` and :func:`zero_grad`.
    """

    __slots__ = ("value", "grad", "op", "parents", "_vjps", "requires_grad")

    def __init__(self, value, op="const", parents=(), vjps=(), requires_grad=None):
        self.value = as_matrix(value)
        self.grad = np.zeros_like(self.value)
        self.op = op
        self.parents = tuple(parents)
        self._vjps = tuple(vjps)
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    # Operator sugar; the module-level functions do the real work.
    def __add__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Parameter:
    """A named trainable leaf. Names must be unique within one model."""

    def __init__(self, name, value):
        self.name = name
        self.node = Node(value, op="param", requires_grad=True)

    @property
    def value(self):
        return self.node.value

    @value.setter
    def value(self, v):
        arr = as_matrix(v)
        if arr.shape != self.node.value.shape:
            raise ShapeError(f"parameter {self.name}", self.node.value.shape, arr.shape)
        self.node.value = arr
        self.node.grad = np.zeros_like(arr)

    @property
    def grad(self):
        return self.node.grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.node.value.shape})"


def constant(value, op="const"):
    return Node(value, op=op, requires_grad=False)


def make_node(value, op, parents, vjps):
    """Construct a node for a composite primitive with custom VJPs.

    ``vjps`` is a tuple parallel to ``parents``; each element maps the
    output adjoint to that parent's adjoint contribution (or is None for
    non-differentiable inputs).
    """
    return Node(value, op=op, parents=parents, vjps=vjps)


def _lift(x):
    return x if isinstance(x, Node) else constant(x)


# ---------------------------------------------------------------------------
# backward pass


def _topo_from(root):
    """Post-order over the requires-grad subgraph (parents before children)."""
    order = []
    visited = {id(root)}
    stack = [(root, iter(root.parents))]
    while stack:
        node, it = stack[-1]
        pushed = False
        for p in it:
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p.parents)))
                pushed = True
                break
        if not pushed:
            order.append(node)
            stack.pop()
    return order


def backprop(loss):
    """Accumulate d(loss)/d(node) into ``grad`` for every reachable node.

    ``loss`` must be 1x1. Adjoints are computed fresh per call and added
    into the persistent ``grad`` buffers.
    """
    if loss.value.shape != (1, 1):
        raise ShapeError("backprop: loss must be scalar", loss.value.shape)
    order = _topo_from(loss)
    adjoint = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        node.grad += g
        for parent, vjp in zip(node.parents, node._vjps):
            if vjp is None or not parent.requires_grad:
                continue
            contrib = vjp(g)
            pid = id(parent)
            prior = adjoint.get(pid)
            adjoint[pid] = contrib if prior is None else prior + contrib


def gradients(loss, parameters):
    """Run backprop and return {parameter name -> gradient matrix}.

    Parameters the loss does not reach keep their zero gradient.
    """
    backprop(loss)
    return {p.name: p.node.grad.copy() for p in parameters}


def zero_grad(parameters):
    for p in parameters:
        p.node.grad[...] = 0.0


# ---------------------------------------------------------------------------
# elementwise ops with (1xD / Nx1 / 1x1) broadcasting


def _check_broadcast(op, a, b):
    (ra, ca), (rb, cb) = a.shape, b.shape
    if (ra != rb and 1 not in (ra, rb)) or (ca != cb and 1 not in (ca, cb)):
        raise ShapeError(op, a.shape, b.shape)


def _unbroadcast(grad, shape):
    out = grad
    if shape[0] == 1 and out.shape[0] > 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] > 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def add(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a.value, b.value)
    return make_node(
        a.value + b.value,
        "add",
        (a, b),
        (
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(g, b.value.shape),
        ),
    )


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("sub", a.value, b.value)
    return make_node(
        a.value - b.value,
        "sub",
        (a, b),
        (
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(-g, b.value.shape),
        ),
    )


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("mul", a.value, b.value)
    return make_node(
        a.value * b.value,
        "mul",
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("div", a.value, b.value)
    return make_node(
        a.value / b.value,
        "div",
        (a, b),
        (
            lambda g: _unbroadcast(g / b.value, a.value.shape),
            lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError("matmul", a.value.shape, b.value.shape)
    return make_node(
        a.value @ b.value,
        "matmul",
        (a, b),
        (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


def transpose(a):
    return make_node(a.value.T.copy(), "transpose", (a,), (lambda g: g.T,))


def trace(a):
    r, c = a.value.shape
    return make_node(
        np.trace(a.value).reshape(1, 1),
        "trace",
        (a,),
        (lambda g: g[0, 0] * np.eye(r, c),),
    )


def scale(a, c):
    c = float(c)
    return make_node(a.value * c, "scale", (a,), (lambda g: g * c,))


# ---------------------------------------------------------------------------
# nonlinearities (subgradient at a ReLU kink is the negative-side slope)


def relu(a):
    mask = a.value > 0
    return make_node(np.where(mask, a.value, 0.0), "relu", (a,), (lambda g: g * mask,))


def leaky_relu(a, slope=0.01):
    slope = float(slope)
    mask = a.value > 0
    deriv = np.where(mask, 1.0, slope)
    return make_node(
        np.where(mask, a.value, slope * a.value),
        "leaky_relu",
        (a,),
        (lambda g: g * deriv,),
    )


def _sigmoid_values(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    s = _sigmoid_values(a.value)
    return make_node(s, "sigmoid", (a,), (lambda g: g * s * (1.0 - s),))


def absval(a):
    sign = np.sign(a.value)
    return make_node(np.abs(a.value), "abs", (a,), (lambda g: g * sign,))


def sqrt(a):
    root = np.sqrt(a.value)
    # floor keeps the gradient finite if an input touches exactly zero
    denom = 2.0 * np.maximum(root, 1e-12)
    return make_node(root, "sqrt", (a,), (lambda g: g / denom,))


# ---------------------------------------------------------------------------
# reductions


def summation(a, axis=None):
    r, c = a.value.shape
    if axis is None:
        val = a.value.sum().reshape(1, 1)
        vjp = lambda g: np.full((r, c), g[0, 0])
    elif axis == 0:
        val = a.value.sum(axis=0, keepdims=True)
        vjp = lambda g: np.broadcast_to(g, (r, c)).copy()
    elif axis == 1:
        val = a.value.sum(axis=1, keepdims=True)
        vjp = lambda g: np.broadcast_to(g, (r, c)).copy()
    else:
        raise ValueError(f"sum: axis must be None, 0 or 1, got {axis!r}")
    return make_node(val, "sum", (a,), (vjp,))


def mean(a, axis=None):
    r, c = a.value.shape
    count = {None: r * c, 0: r, 1: c}[axis]
    return scale(summation(a, axis=axis), 1.0 / count)


# ---------------------------------------------------------------------------
# structure ops


def concat_cols(nodes):
    nodes = [_lift(n) for n in nodes]
    rows = nodes[0].value.shape[0]
    for n in nodes[1:]:
        if n.value.shape[0] != rows:
            raise ShapeError("concat_cols", nodes[0].value.shape, n.value.shape)
    splits = np.cumsum([n.value.shape[1] for n in nodes])[:-1]
    vjps = []
    start = 0
    for n in nodes:
        stop = start + n.value.shape[1]
        vjps.append(lambda g, s=start, e=stop: g[:, s:e])
        start = stop
    del splits
    return make_node(np.hstack([n.value for n in nodes]), "concat_cols", nodes, vjps)


def concat_rows(nodes):
    nodes = [_lift(n) for n in nodes]
    cols = nodes[0].value.shape[1]
    for n in nodes[1:]:
        if n.value.shape[1] != cols:
            raise ShapeError("concat_rows", nodes[0].value.shape, n.value.shape)
    vjps = []
    start = 0
    for n in nodes:
        stop = start + n.value.shape[0]
        vjps.append(lambda g, s=start, e=stop: g[s:e, :])
        start = stop
    return make_node(np.vstack([n.value for n in nodes]), "concat_rows", nodes, vjps)


def gather_rows(a, indices):
    idx = np.asarray(indices, dtype=np.intp).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= a.value.shape[0]):
        raise ShapeError("gather_rows: index out of range", a.value.shape, (idx.size,))

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return out

    return make_node(a.value[idx, :], "gather_rows", (a,), (vjp,))


def entry(a, i, j):
    r, c = a.value.shape
    if not (0 <= i < r and 0 <= j < c):
        raise ShapeError("entry: index out of range", (r, c), (i, j))

    def vjp(g):
        out = np.zeros_like(a.value)
        out[i, j] = g[0, 0]
        return out

    return make_node(a.value[i, j].reshape(1, 1), "entry", (a,), (vjp,))


# ---------------------------------------------------------------------------
# row-wise softmax family


def softmax_rows(a):
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    return make_node(
        s,
        "softmax",
        (a,),
        (lambda g: s * (g - (g * s).sum(axis=1, keepdims=True)),),
    )


def log_softmax_rows(a):
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - log_z
    soft = np.exp(out)
    return make_node(
        out,
        "log_softmax",
        (a,),
        (lambda g: g - soft * g.sum(axis=1, keepdims=True),),
    )


def fsum_scalars(nodes):
    """Order-insensitive exact sum of 1x1 nodes (math.fsum)."""
    nodes = [_lift(n) for n in nodes]
    for n in nodes:
        if n.value.shape != (1, 1):
            raise ShapeError("fsum_scalars", n.value.shape)
    total = math.fsum(float(n.value[0, 0]) for n in nodes)
    vjps = [lambda g: g for _ in nodes]
    return make_node(np.array([[total]]), "fsum", nodes, vjps)


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormState:
    """Running statistics for one batch-norm op (not trainable)."""

    def __init__(self, width, momentum=0.1, eps=1e-5):
        self.mean = np.zeros((1, width))
        self.var = np.ones((1, width))
        self.momentum = float(momentum)
        self.eps = float(eps)

    def copy(self):
        dup = BatchNormState(self.mean.shape[1], self.momentum, self.eps)
        dup.mean = self.mean.copy()
        dup.var = self.var.copy()
        return dup


def batchnorm(x, gamma, beta, state, training):
    """Per-column batch normalization.

    Training mode normalizes with the batch statistics and updates the
    running buffers (momentum mixing); eval mode normalizes with the
    running buffers only.
    """
    n, width = x.value.shape
    if gamma.value.shape != (1, width) or beta.value.shape != (1, width):
        raise ShapeError("batchnorm", x.value.shape, gamma.value.shape, beta.value.shape)
    eps = state.eps
    if training:
        mu = x.value.mean(axis=0, keepdims=True)
        var = x.value.var(axis=0, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.value - mu) * inv_std
        unbiased = var * (n / (n - 1)) if n > 1 else var
        m = state.momentum
        state.mean = (1.0 - m) * state.mean + m * mu
        state.var = (1.0 - m) * state.var + m * unbiased

        def vjp_x(g):
            dxhat = g * gamma.value
            term = dxhat - dxhat.mean(axis=0, keepdims=True)
            term -= xhat * (dxhat * xhat).mean(axis=0, keepdims=True)
            return inv_std * term

    else:
        inv_std = 1.0 / np.sqrt(state.var + eps)
        xhat = (x.value - state.mean) * inv_std

        def vjp_x(g):
            return g * gamma.value * inv_std

    out = gamma.value * xhat + beta.value
    return make_node(
        out,
        "batchnorm",
        (x, gamma, beta),
        (
            vjp_x,
            lambda g: (g * xhat).sum(axis=0, keepdims=True),
            lambda g: g.sum(axis=0, keepdims=True),
        ),
    )


# ---------------------------------------------------------------------------
# initialization


def fan_in_uniform(rng, fan_in, shape):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for linear weights."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
