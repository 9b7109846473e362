"""Dense tensors with reverse-mode differentiation on an explicit tape.

A ``Graph`` records primitive operations in execution order while it is
active (it is a context manager); ``backward`` replays the tape in exact
reverse order, which is deterministic by construction.  Outside any active
graph the same primitives run in inference mode and record nothing.

Distinct graphs are fully independent: one graph per model instance may
run per thread (the active-graph stack is thread-local).
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ContractError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "Graph",
    "no_grad",
    "parameter",
    "backward",
    "grad_check",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "concat",
    "reshape",
    "embedding_lookup",
    "log_softmax",
    "softmax",
    "relu",
    "layer_norm",
    "tanh",
    "tsum",
    "tmean",
    "weighted_sum",
    "pairwise_sum",
    "frame_bias_add",
    "pick",
    "custom_op",
]

_local = threading.local()


def _graph_stack():
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def _active_graph():
    stack = _graph_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense array with an optional gradient slot.

    ``data`` is a numpy array (float64 in tests, float32 permitted for
    training).  ``grad`` is populated by ``backward`` for every tensor
    with ``requires_grad`` that participated in the recorded graph.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"


def parameter(data, dtype=np.float64):
    """A trainable leaf tensor."""
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


class Graph:
    """Tape of recorded operations, in execution (topological) order.

    Each entry is ``(out, parents, vjp)`` where ``vjp(grad_out)`` returns
    one gradient array (or None) per parent.
    """

    def __init__(self):
        self.ops = []

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _graph_stack().pop()
        assert popped is self
        return False

    def record(self, out, parents, vjp):
        self.ops.append((out, parents, vjp))

    def backward(self, loss):
        backward(self, loss)


class no_grad:
    """Context manager that disables recording, even inside an active graph."""

    def __enter__(self):
        _graph_stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _graph_stack().pop()
        return False


def backward(graph, loss):
    """Populate ``grad`` of every requires_grad tensor reachable from ``loss``.

    ``loss`` must be a scalar recorded on ``graph``.  Traversal is the exact
    reverse of recording order, so repeated runs on identical graphs produce
    bit-identical gradients.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ContractError("backward requires a scalar loss tensor")
    grads = {id(loss): np.ones_like(loss.data)}
    for out, parents, vjp in reversed(graph.ops):
        g_out = grads.pop(id(out), None)
        if g_out is None:
            continue
        for p, g in zip(parents, vjp(g_out)):
            if g is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if p.requires_grad:
                p.grad = grads[key]
    # Tensors that require grad but received no flow still get a populated slot.
    for out, parents, _ in graph.ops:
        for t in parents + (out,):
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)
    if loss.requires_grad and loss.grad is None:
        loss.grad = np.ones_like(loss.data)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(out_data, parents, vjp):
    """Record an operation with a hand-written vector-Jacobian product.

    Used by the lattice losses, whose gradients come from their own
    forward-backward recursions rather than from composed primitives.
    """
    out = Tensor(out_data)
    g = _active_graph()
    if g is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        g.record(out, tuple(parents), vjp)
    return out


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {tuple(a.shape)} x {tuple(b.shape)}")
    out_data = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return custom_op(out_data, (a, b), vjp)


def transpose(a):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {tuple(a.shape)}")
    return custom_op(a.data.T.copy(), (a,), lambda g: (g.T,))


def add(a, b):
    """Elementwise add; a 1-D ``b`` is broadcast onto the last axis of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        def vjp(g):
            return g, g
    elif b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        def vjp(g):
            axes = tuple(range(g.ndim - 1))
            return g, g.sum(axis=axes) if axes else g
    else:
        raise ShapeError(f"add shapes incompatible: {tuple(a.shape)} vs {tuple(b.shape)}")
    return custom_op(a.data + b.data, (a, b), vjp)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub shapes incompatible: {tuple(a.shape)} vs {tuple(b.shape)}")
    return custom_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes incompatible: {tuple(a.shape)} vs {tuple(b.shape)}")
    return custom_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    return custom_op(a.data * c, (a,), lambda g: (g * c,))


def concat(parts, axis=0):
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat of zero tensors")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return custom_op(out_data, tuple(parts), vjp)


def reshape(a, shape):
    a = _as_tensor(a)
    shape = tuple(shape)
    out_data = a.data.reshape(shape)
    orig = a.shape

    def vjp(g):
        return (g.reshape(orig),)

    return custom_op(out_data, (a,), vjp)


def embedding_lookup(table, ids):
    """Gather rows of a matrix; gradients scatter-accumulate into the table."""
    table = _as_tensor(table)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be a matrix, got {tuple(table.shape)}")
    idx = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"embedding id out of range for table with {n} rows")
    out_data = table.data[idx]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return custom_op(out_data, (table,), vjp)


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out_data = z - lse

    def vjp(g):
        return (g - np.exp(out_data) * g.sum(axis=axis, keepdims=True),)

    return custom_op(out_data, (a,), vjp)


def softmax(a, axis=-1):
    a = _as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return custom_op(out_data, (a,), vjp)


def relu(a):
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)
    mask = a.data > 0.0
    return custom_op(out_data, (a,), lambda g: (g * mask,))


def layer_norm(a, gain, bias, eps=1e-6):
    """Normalize the last axis to zero mean, unit variance, then apply a
    learned per-feature gain and bias."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    d = a.shape[-1] if a.data.ndim >= 1 else 0
    if a.data.ndim < 1 or gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm expects (..., D) with (D,) gain and bias, got "
            f"{tuple(a.shape)}, {tuple(gain.shape)}, {tuple(bias.shape)}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv
    out_data = normed * gain.data + bias.data

    def vjp(g):
        axes = tuple(range(g.ndim - 1))
        dn = g * gain.data
        da = inv * (
            dn
            - dn.mean(axis=-1, keepdims=True)
            - normed * (dn * normed).mean(axis=-1, keepdims=True)
        )
        return da, (g * normed).sum(axis=axes), g.sum(axis=axes)

    return custom_op(out_data, (a, gain, bias), vjp)


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)
    return custom_op(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def tsum(a):
    a = _as_tensor(a)
    out_data = np.asarray(a.data.sum())
    return custom_op(out_data, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def tmean(a):
    a = _as_tensor(a)
    n = a.data.size
    out_data = np.asarray(a.data.mean())

    def vjp(g):
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return custom_op(out_data, (a,), vjp)


def weighted_sum(weights, rows):
    """Sum of matrix rows weighted by a vector: ``w @ rows``."""
    weights, rows = _as_tensor(weights), _as_tensor(rows)
    if weights.data.ndim != 1 or rows.data.ndim != 2 or weights.shape[0] != rows.shape[0]:
        raise ShapeError(
            f"weighted_sum expects (T,) and (T, D), got {tuple(weights.shape)} and {tuple(rows.shape)}"
        )
    out_data = weights.data @ rows.data

    def vjp(g):
        return rows.data @ g, np.outer(weights.data, g)

    return custom_op(out_data, (weights, rows), vjp)


def pairwise_sum(a, b):
    """All-pairs row sums: out[t, u, :] = a[t, :] + b[u, :]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"pairwise_sum expects (T, J) and (U, J), got {tuple(a.shape)} and {tuple(b.shape)}"
        )
    out_data = a.data[:, None, :] + b.data[None, :, :]

    def vjp(g):
        return g.sum(axis=1), g.sum(axis=0)

    return custom_op(out_data, (a, b), vjp)


def frame_bias_add(banded, frames):
    """Add one row of ``frames`` to every row of the matching band:
    out[t, i, :] = banded[t, i, :] + frames[t, :]."""
    banded, frames = _as_tensor(banded), _as_tensor(frames)
    if (
        banded.data.ndim != 3
        or frames.data.ndim != 2
        or banded.shape[0] != frames.shape[0]
        or banded.shape[2] != frames.shape[1]
    ):
        raise ShapeError(
            f"frame_bias_add expects (T, S, J) and (T, J), got {tuple(banded.shape)} and {tuple(frames.shape)}"
        )
    out_data = banded.data + frames.data[:, None, :]

    def vjp(g):
        return g, g.sum(axis=1)

    return custom_op(out_data, (banded, frames), vjp)


def pick(a, index):
    """Select one element as a scalar tensor."""
    a = _as_tensor(a)
    index = tuple(int(i) for i in np.atleast_1d(index)) if np.ndim(index) else (int(index),)
    if len(index) != a.data.ndim:
        raise ShapeError(f"pick index {index} does not address shape {tuple(a.shape)}")
    out_data = np.asarray(a.data[index])

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[index] = g
        return (ga,)

    return custom_op(out_data, (a,), vjp)


def grad_check(f, x, eps):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a tensor to a scalar tensor and must be smooth at ``x``.
    The error per component is |analytic - numeric| / max(1, |analytic|).
    """
    if not eps > 0.0:
        raise NumericError(f"grad_check needs eps > 0, got {eps}")
    x = _as_tensor(x)
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Graph() as g:
        out = f(probe)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("grad_check target must return a scalar tensor")
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check target is non-finite at x")
    backward(g, out)
    analytic = probe.grad
    if analytic is None:
        raise ContractError("grad_check target does not depend on x")
    flat = x.data.copy().ravel()
    numeric = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(Tensor(flat.reshape(x.shape))).item()
            flat[i] = orig - eps
            fm = f(Tensor(flat.reshape(x.shape))).item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * eps)
    if not (np.isfinite(numeric).all() and np.isfinite(analytic).all()):
        raise NumericError("non-finite values in gradient check")
    denom = np.maximum(1.0, np.abs(analytic.ravel()))
    return float(np.max(np.abs(analytic.ravel() - numeric) / denom)) if flat.size else 0.0
