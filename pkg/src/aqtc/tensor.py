"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Tensors wrap read-only numpy arrays. Operations go through :func:`apply`,
which records a node on the active :class:`Graph` whenever one of the
inputs requires a gradient. :func:`backward` walks the recorded nodes in
reverse insertion order and accumulates vector-Jacobian products.

    >>> x = Tensor([0.0, 0.0], requires_grad=True)
    >>> with Graph() as g:
    ...     loss = apply("sum", apply("tanh", x))
    >>> gradients(g, loss, [x])[0]
    array([1., 1.])
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyAxisError, NonScalarLossError, ShapeError

# clamp floor shared with the cross-entropy loss
LOG_FLOOR = 1e-12

OP_KINDS = (
    "matmul", "add", "sub", "elementwise_mul", "concat", "tanh", "sigmoid",
    "relu", "softmax", "sum", "mean", "slice", "reshape", "transpose", "log",
)


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data, requires_grad=False, node_id=None):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = node_id

    @classmethod
    def _wrap(cls, arr, requires_grad=False, node_id=None):
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = requires_grad
        t.node_id = node_id
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        """Flat row-major copy of the entries."""
        return self.data.ravel().copy()

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    __slots__ = ("kind", "inputs", "input_ids", "output", "attrs")

    def __init__(self, kind, inputs, input_ids, output, attrs):
        self.kind = kind
        self.inputs = inputs
        self.input_ids = input_ids
        self.output = output
        self.attrs = attrs


_ACTIVE: list["Graph"] = []


class Graph:
    """Tape of recorded nodes; topological order is insertion order.

    Leaf tensors (parameters) are registered lazily the first time they
    feed an op, so one parameter tensor can participate in many graphs.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaf_ids: dict[int, int] = {}

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def _input_id(self, t):
        if not t.requires_grad:
            return None
        if t.node_id is not None and t.node_id < len(self.nodes) and self.nodes[t.node_id].output is t:
            return t.node_id
        key = id(t)
        nid = self._leaf_ids.get(key)
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(Node("leaf", (), (), t, {}))
            self._leaf_ids[key] = nid
        return nid

    def id_of(self, t):
        """Node id of ``t`` in this graph, or None if it never took part."""
        if t.node_id is not None and t.node_id < len(self.nodes) and self.nodes[t.node_id].output is t:
            return t.node_id
        return self._leaf_ids.get(id(t))

    def record(self, kind, inputs, out_arr, attrs):
        ids = tuple(self._input_id(t) for t in inputs)
        nid = len(self.nodes)
        out = Tensor._wrap(out_arr, requires_grad=True, node_id=nid)
        self.nodes.append(Node(kind, inputs, ids, out, attrs))
        return out


def active_graph():
    return _ACTIVE[-1] if _ACTIVE else None


# ---------------------------------------------------------------- forward


def _bias_compatible(a, b):
    if a.shape == b.shape:
        return True
    return b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]


def _norm_axis(axis, ndim, kind, shape):
    if axis is None:
        return None
    ax = axis + ndim if axis < 0 else axis
    if not 0 <= ax < max(ndim, 1):
        raise ShapeError(kind, shape, detail=f"axis {axis} out of range")
    return ax


def _forward(kind, arrs, attrs):
    if kind == "matmul":
        a, b = arrs
        if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
            raise ShapeError(kind, a.shape, b.shape)
        return a @ b
    if kind in ("add", "sub", "elementwise_mul"):
        a, b = arrs
        if not _bias_compatible(a, b):
            raise ShapeError(kind, a.shape, b.shape)
        if kind == "add":
            return a + b
        if kind == "sub":
            return a - b
        return a * b
    if kind == "concat":
        axis = attrs["axis"]
        ref = arrs[0]
        for a in arrs[1:]:
            if a.ndim != ref.ndim or any(
                    a.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis):
                raise ShapeError(kind, ref.shape, a.shape)
        return np.concatenate(arrs, axis=axis)
    if kind == "tanh":
        return np.tanh(arrs[0])
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * arrs[0]))
    if kind == "relu":
        return np.maximum(arrs[0], 0.0)
    if kind == "softmax":
        x = arrs[0]
        axis = attrs["axis"]
        if x.ndim == 0 or x.shape[axis] == 0:
            raise EmptyAxisError(f"softmax over empty axis of shape {x.shape}")
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        # summing in sorted order makes the normalizer independent of input order
        return e / np.sort(e, axis=axis).sum(axis=axis, keepdims=True)
    if kind == "sum":
        return np.sum(arrs[0], axis=attrs["axis"])
    if kind == "mean":
        x = arrs[0]
        axis = attrs["axis"]
        if (x.size if axis is None else x.shape[axis]) == 0:
            raise EmptyAxisError(f"mean over empty axis of shape {x.shape}")
        return np.mean(x, axis=axis)
    if kind == "slice":
        out = arrs[0][attrs["key"]]
        return np.array(out, dtype=np.float64)
    if kind == "reshape":
        x = arrs[0]
        shape = attrs["shape"]
        if math.prod(shape) != x.size:
            raise ShapeError(kind, x.shape, shape)
        return x.reshape(shape)
    if kind == "transpose":
        x = arrs[0]
        if x.ndim != 2:
            raise ShapeError(kind, x.shape, detail="transpose needs a matrix")
        return x.T.copy()
    if kind == "log":
        return np.log(np.maximum(arrs[0], LOG_FLOOR))
    raise ValueError(f"unknown op kind {kind!r}")


_ARITY = {"matmul": 2, "add": 2, "sub": 2, "elementwise_mul": 2}


def _check_key(key, shape):
    if not isinstance(key, tuple):
        key = (key,)
    if len(key) > len(shape):
        raise ShapeError("slice", shape, detail=f"too many indices {key}")
    for k, n in zip(key, shape):
        if isinstance(k, (int, np.integer)):
            if not -n <= k < n:
                raise ShapeError("slice", shape, detail=f"index {k} out of range")
        elif not isinstance(k, slice):
            raise ShapeError("slice", shape, detail=f"unsupported index {k!r}")
    return key


def apply(kind, *inputs, **attrs):
    """Run one op forward; record it when a graph is active and any input needs grad."""
    tensors = tuple(as_tensor(t) for t in inputs)
    arity = _ARITY.get(kind, None if kind == "concat" else 1)
    if arity is not None and len(tensors) != arity:
        raise TypeError(f"{kind} takes {arity} inputs, got {len(tensors)}")
    if kind == "concat" and not tensors:
        raise TypeError("concat needs at least one input")
    arrs = [t.data for t in tensors]
    if kind in ("concat", "softmax", "sum", "mean"):
        default = 0 if kind == "concat" else (-1 if kind == "softmax" else None)
        attrs["axis"] = _norm_axis(attrs.get("axis", default), arrs[0].ndim, kind, arrs[0].shape)
    if kind == "slice":
        attrs["key"] = _check_key(attrs["key"], arrs[0].shape)
    if kind == "reshape":
        attrs["shape"] = tuple(int(s) for s in attrs["shape"])
    out = _forward(kind, arrs, attrs)
    g = active_graph()
    if g is not None and any(t.requires_grad for t in tensors):
        return g.record(kind, tensors, out, attrs)
    return Tensor._wrap(out)


# ---------------------------------------------------------------- backward


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    return grad.reshape(-1, shape[0]).sum(axis=0)


def _vjp(node, g):
    kind = node.kind
    xs = [t.data for t in node.inputs]
    y = node.output.data
    if kind == "matmul":
        a, b = xs
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.T, a.T @ g
        if a.ndim == 1 and b.ndim == 2:
            return b @ g, np.outer(a, g)
        if a.ndim == 2 and b.ndim == 1:
            return np.outer(g, b), a.T @ g
        return g * b, g * a
    if kind == "add":
        return g, _unbroadcast(g, xs[1].shape)
    if kind == "sub":
        return g, -_unbroadcast(g, xs[1].shape)
    if kind == "elementwise_mul":
        a, b = xs
        return g * b, _unbroadcast(g * a, b.shape)
    if kind == "concat":
        axis = node.attrs["axis"]
        cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return np.split(g, cuts, axis=axis)
    if kind == "tanh":
        return (g * (1.0 - y * y),)
    if kind == "sigmoid":
        return (g * y * (1.0 - y),)
    if kind == "relu":
        return (g * (xs[0] > 0.0),)
    if kind == "softmax":
        axis = node.attrs["axis"]
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)
    if kind in ("sum", "mean"):
        x = xs[0]
        axis = node.attrs["axis"]
        if axis is None:
            out = np.broadcast_to(g, x.shape)
            count = x.size
        else:
            out = np.broadcast_to(np.expand_dims(g, axis), x.shape)
            count = x.shape[axis]
        return (out / count if kind == "mean" else out.copy(),)
    if kind == "slice":
        out = np.zeros_like(xs[0])
        out[node.attrs["key"]] += g
        return (out,)
    if kind == "reshape":
        return (g.reshape(xs[0].shape),)
    if kind == "transpose":
        return (g.T,)
    if kind == "log":
        x = xs[0]
        return (np.where(x > LOG_FLOOR, g / np.maximum(x, LOG_FLOOR), 0.0),)
    raise ValueError(f"no gradient rule for {kind!r}")


def backward(graph, loss):
    """Gradients of a scalar ``loss`` for every node in ``graph``.

    Returns a dict ``node_id -> Tensor``. Nodes that do not influence the
    loss get zero gradients. Fan-out is handled by summation.
    """
    if loss.data.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")
    root = graph.id_of(loss)
    if root is None:
        raise ValueError("loss was not produced inside this graph")
    grads: dict[int, np.ndarray] = {root: np.ones_like(loss.data)}
    for nid in range(root, -1, -1):
        node = graph.nodes[nid]
        g = grads.get(nid)
        if g is None or node.kind == "leaf":
            continue
        for iid, gi in zip(node.input_ids, _vjp(node, g)):
            if iid is None:
                continue
            prev = grads.get(iid)
            grads[iid] = gi.copy() if prev is None else prev + gi
    return {
        nid: Tensor._wrap(grads[nid] if nid in grads else np.zeros_like(n.output.data))
        for nid, n in enumerate(graph.nodes)
    }


def gradients(graph, loss, wrt: Sequence[Tensor]):
    """Gradient arrays of ``loss`` with respect to each tensor in ``wrt``."""
    if loss.data.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")
    if graph.id_of(loss) is None:
        # loss does not depend on any tracked tensor
        return [np.zeros_like(t.data) for t in wrt]
    grads = backward(graph, loss)
    out = []
    for t in wrt:
        nid = graph.id_of(t)
        out.append(np.zeros_like(t.data) if nid is None else np.array(grads[nid].data))
    return out


def grad_check(f: Callable[..., Tensor], params: Sequence[Tensor], step=1e-5, analytic_hook=None):
    """Max relative error between backprop and central differences.

    ``f(*params)`` must return a scalar tensor. ``analytic_hook`` lets tests
    tamper with the analytic gradients (negative controls).
    """
    params = [p if p.requires_grad else Tensor(p.data, requires_grad=True) for p in params]
    with Graph() as g:
        loss = f(*params)
    if loss.data.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")
    analytic = gradients(g, loss, params)
    if analytic_hook is not None:
        analytic = analytic_hook(analytic)
    worst = 0.0
    for i, p in enumerate(params):
        base = p.data
        for k in range(base.size):
            bumped = []
            for sign in (1.0, -1.0):
                arr = base.copy()
                arr.flat[k] += sign * step
                args = list(params)
                args[i] = Tensor._wrap(arr)
                bumped.append(f(*args).item())
            numeric = (bumped[0] - bumped[1]) / (2.0 * step)
            a = float(analytic[i].flat[k])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- sugar


def matmul(a, b):
    return apply("matmul", a, b)


def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("elementwise_mul", a, b)


def concat(tensors, axis=0):
    return apply("concat", *tensors, axis=axis)


def tanh(x):
    return apply("tanh", x)


def sigmoid(x):
    return apply("sigmoid", x)


def relu(x):
    return apply("relu", x)


def softmax(x, axis=-1):
    return apply("softmax", x, axis=axis)


def tsum(x, axis=None):
    return apply("sum", x, axis=axis)


def mean(x, axis=None):
    return apply("mean", x, axis=axis)


def take(x, key):
    return apply("slice", x, key=key)


def reshape(x, shape):
    return apply("reshape", x, shape=shape)


def transpose(x):
    return apply("transpose", x)


def log(x):
    return apply("log", x)
