"""Minimal reverse-mode autodiff over numpy arrays.

Every operation records a closure that maps the output gradient onto its
inputs; Tensor.backward() replays the graph in reverse topological order.
The op set is exactly what the micro transformer needs: linear algebra,
ReLU^2 / RMSNorm / sigmoid / softmax / tanh softcap, embedding gather,
row gather/scatter for expert dispatch, rotary position twiddles, and a
fused cross-entropy.

Set `nan_check(True)` to assert every forward value is finite; useful when
chasing a diverging run, too slow to leave on.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidShapeError

__all__ = [
    "Tensor",
    "nan_check",
    "matmul",
    "add",
    "mul",
    "scale",
    "add_const",
    "reshape",
    "transpose",
    "relu_squared",
    "rmsnorm",
    "sigmoid",
    "tanh_softcap",
    "softmax",
    "embedding",
    "take_rows",
    "index_add_rows",
    "rope_rotate",
    "causal_attention",
    "cross_entropy_logits",
    "mean_all",
    "sum_all",
    "dot_const",
]

_NAN_CHECK = False


def nan_check(enable: bool) -> None:
    global _NAN_CHECK
    _NAN_CHECK = enable


class Tensor:
    """A numpy array with a gradient slot and graph linkage."""

    __slots__ = ("values", "grad", "_parents", "_backward_fn")

    def __init__(self, values, parents=(), backward=None):
        self.values = np.asarray(values)
        if _NAN_CHECK and not np.all(np.isfinite(self.values)):
            raise FloatingPointError("non-finite values in forward pass")
        self.grad = None
        self._parents = parents
        self._backward_fn = backward

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def size(self):
        return self.values.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def accumulate(self, g):
        # never mutate in place: gradient arrays may be shared between nodes
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Reverse-mode sweep from a scalar output."""
        if self.size != 1:
            raise InvalidShapeError("backward() starts from a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.values)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # convenience arithmetic (same-shape or scalar only)
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batch dimensions must match exactly (no broadcasting)."""
    if a.shape[:-2] != b.shape[:-2]:
        raise InvalidShapeError(f"batch dims differ: {a.shape} @ {b.shape}")
    out = Tensor(a.values @ b.values, parents=(a, b))

    def backward(g):
        a.accumulate(g @ _swap_last(b.values))
        b.accumulate(_swap_last(a.values) @ g)

    out._backward_fn = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise InvalidShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.values + b.values, parents=(a, b))

    def backward(g):
        a.accumulate(g)
        b.accumulate(g)

    out._backward_fn = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise InvalidShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.values * b.values, parents=(a, b))

    def backward(g):
        a.accumulate(g * b.values)
        b.accumulate(g * a.values)

    out._backward_fn = backward
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.values * s, parents=(a,))
    out._backward_fn = lambda g: a.accumulate(g * s)
    return out


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Add a non-differentiable array (broadcastable), e.g. an attention mask."""
    out = Tensor(a.values + c, parents=(a,))

    def backward(g):
        a.accumulate(g if g.shape == a.shape else _unbroadcast(g, a.shape))

    out._backward_fn = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.values.reshape(shape), parents=(a,))
    out._backward_fn = lambda g: a.accumulate(g.reshape(a.shape))
    return out


def transpose(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)
    out = Tensor(np.transpose(a.values, axes), parents=(a,))
    out._backward_fn = lambda g: a.accumulate(np.transpose(g, inverse))
    return out


def relu_squared(a: Tensor) -> Tensor:
    """max(x, 0)^2 — smooth at zero, the activation used throughout."""
    clipped = np.maximum(a.values, 0)
    out = Tensor(clipped * clipped, parents=(a,))
    out._backward_fn = lambda g: a.accumulate(g * (2.0 * clipped))
    return out


def rmsnorm(a: Tensor, eps: float = 1e-6) -> Tensor:
    """x / sqrt(mean(x^2) + eps) over the last axis; no learned scale."""
    x = a.values
    ms = np.mean(x * x, axis=-1, keepdims=True) + eps
    inv = 1.0 / np.sqrt(ms)
    y = x * inv
    out = Tensor(y, parents=(a,))
    n = x.shape[-1]

    def backward(g):
        gx = g * inv - x * (np.sum(g * x, axis=-1, keepdims=True) * inv**3 / n)
        a.accumulate(gx)

    out._backward_fn = backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    y[~pos] = e / (1.0 + e)
    out = Tensor(y, parents=(a,))
    out._backward_fn = lambda g: a.accumulate(g * y * (1.0 - y))
    return out


def tanh_softcap(a: Tensor, cap: float) -> Tensor:
    """cap * tanh(x / cap): squashes logits into (-cap, cap), slope 1 at 0."""
    t = np.tanh(a.values / cap)
    out = Tensor(cap * t, parents=(a,))
    out._backward_fn = lambda g: a.accumulate(g * (1.0 - t * t))
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.values
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, parents=(a,))

    def backward(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        a.accumulate(y * (g - dot))

    out._backward_fn = backward
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from an embedding table; ids are a constant int array."""
    out = Tensor(table.values[ids], parents=(table,))

    def backward(g):
        gt = np.zeros_like(table.values)
        np.add.at(gt, ids, g)
        table.accumulate(gt)

    out._backward_fn = backward
    return out


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; duplicate indices accumulate on backward."""
    out = Tensor(a.values[idx], parents=(a,))

    def backward(g):
        ga = np.zeros_like(a.values)
        np.add.at(ga, idx, g)
        a.accumulate(ga)

    out._backward_fn = backward
    return out


def index_add_rows(base: Tensor, idx: np.ndarray, rows: Tensor) -> Tensor:
    """base with rows[j] added at position idx[j] (duplicates accumulate)."""
    v = base.values.copy()
    np.add.at(v, idx, rows.values)
    out = Tensor(v, parents=(base, rows))

    def backward(g):
        base.accumulate(g)
        rows.accumulate(g[idx])

    out._backward_fn = backward
    return out


def rope_rotate(a: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotary position encoding over the last axis, split-half convention.

    a has shape (..., T, head_dim); cos/sin have shape (T, head_dim // 2).
    """
    x = a.values
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    y = np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)
    out = Tensor(y, parents=(a,))

    def backward(g):
        g1, g2 = g[..., :half], g[..., half:]
        ga = np.concatenate([g1 * cos + g2 * sin, -g1 * sin + g2 * cos], axis=-1)
        a.accumulate(ga)

    out._backward_fn = backward
    return out


def causal_attention(q: Tensor, k: Tensor, v: Tensor, scale_factor: float) -> Tensor:
    """softmax(mask(q k^T * scale)) v with a causal mask, fused.

    q, k, v have shape (batch, heads, seq, head_dim). Fusing the score
    scaling, masking, softmax, and the two matmuls into one node keeps the
    large (seq x seq) intermediates out of the graph.
    """
    qv = np.ascontiguousarray(q.values)
    kv = np.ascontiguousarray(k.values)
    vv = np.ascontiguousarray(v.values)
    t = qv.shape[-2]
    att = qv @ _swap_last(kv)
    att *= scale_factor
    rows, cols = np.triu_indices(t, k=1)
    att[..., rows, cols] = -np.inf
    att -= att.max(axis=-1, keepdims=True)
    np.exp(att, out=att)
    att /= att.sum(axis=-1, keepdims=True)
    out = Tensor(att @ vv, parents=(q, k, v))

    def backward(g):
        g_att = g @ _swap_last(vv)
        v.accumulate(_swap_last(att) @ g)
        g_att *= att
        g_att -= att * g_att.sum(axis=-1, keepdims=True)
        g_att *= scale_factor
        q.accumulate(g_att @ kv)
        k.accumulate(_swap_last(g_att) @ qv)

    out._backward_fn = backward
    return out


def cross_entropy_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row cross-entropy in nats; logits (N, V), targets (N,) int.

    Returns the length-N loss vector; reduce with mean_all for training.
    """
    x = logits.values
    if np.any(targets < 0) or np.any(targets >= x.shape[1]):
        raise InvalidShapeError("target ids out of vocabulary range")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(z)
    n = x.shape[0]
    losses = -log_probs[np.arange(n), targets]
    probs = e / z
    out = Tensor(losses, parents=(logits,))

    def backward(g):
        gl = probs * g[:, None]
        gl[np.arange(n), targets] -= g
        logits.accumulate(gl)

    out._backward_fn = backward
    return out


def mean_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.values.mean()), parents=(a,))
    out._backward_fn = lambda g: a.accumulate(np.broadcast_to(g / a.size, a.shape))
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.values.sum()), parents=(a,))
    out._backward_fn = lambda g: a.accumulate(np.broadcast_to(g, a.shape))
    return out


def dot_const(a: Tensor, w: np.ndarray) -> Tensor:
    """Scalar <a, w> against a constant weight array of the same shape."""
    if a.shape != w.shape:
        raise InvalidShapeError(f"dot shape mismatch: {a.shape} vs {w.shape}")
    out = Tensor(np.asarray(np.sum(a.values * w)), parents=(a,))
    out._backward_fn = lambda g: a.accumulate(g * w)
    return out
