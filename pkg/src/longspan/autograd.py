"""Minimal reverse-mode autodiff over dense numpy tensors.

Operations record onto an explicit :class:`Tape`; :meth:`Tape.backward`
replays the recorded operations in exact reverse execution order and
accumulates gradients additively, so tensors used several times receive
the sum of their per-use gradients.  Compute defaults to float32; pass
float64 tensors for tight gradient checking.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

DEFAULT_DTYPE = np.float32
NEG_INF = -1e9  # additive-mask stand-in for -inf; saturates exp() without NaN


class AutogradError(ValueError):
    """Shape mismatch, non-finite values, or misuse of the tape."""


_state = threading.local()


def _tape_stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return scale(self, other) if np.isscalar(other) else mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Execution-ordered record of operations for one backward pass."""

    def __init__(self):
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def record(self, out: Tensor, inputs, backward_fn) -> None:
        self._ops.append((out, tuple(inputs), backward_fn))

    def backward(self, loss: Tensor, leaves=None):
        """Backpropagate from a scalar loss through the recorded operations.

        Sets ``.grad`` on every tensor reached.  When ``leaves`` is
        given, returns a gradient map for exactly those tensors, with
        zeros for leaves the loss does not depend on.
        """
        if loss.data.size != 1:
            raise AutogradError(f"loss must be scalar, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, backward_fn in reversed(self._ops):
            if out.grad is None:
                continue
            for tensor, grad in zip(inputs, backward_fn(out.grad)):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = grad.astype(tensor.dtype, copy=True)
                else:
                    tensor.grad = tensor.grad + grad
        if leaves is not None:
            return {
                t: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for t in leaves
            }
        return None


class no_grad:
    """Context manager disabling gradient tracking (inference fast path)."""

    def __enter__(self):
        self._prev = getattr(_state, "grad_enabled", True)
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _result(data, inputs, backward_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise AutogradError("non-finite value produced by a forward op")
    track = _grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track, dtype=data.dtype)
    if track:
        tape = _active_tape()
        if tape is not None:
            tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _result(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _result(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _result(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise AutogradError("matmul expects 2-d tensors")
    if a.shape[1] != b.shape[0]:
        raise AutogradError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    return _result(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(data, tuple(tensors), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = a.data[index].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result(data, (a,), backward)


def embedding_gather(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise AutogradError("embedding id out of range")
    data = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _result(data, (table,), backward)


def pick(a: Tensor, ids) -> Tensor:
    """Select ``a[t, ids[t]]`` for every row t."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.arange(a.shape[0])
    data = a.data[rows, ids].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, ids), g)
        return (full,)

    return _result(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    data = _sigmoid_np(a.data)
    return _result(data, (a,), lambda g: (g * data * (1.0 - data),))


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(a: Tensor) -> Tensor:
    # log sigma(x) = -softplus(-x) = min(x, 0) - log1p(exp(-|x|)), stable on both tails
    x = a.data
    data = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _result(data, (a,), lambda g: (g * _sigmoid_np(-x),))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return _result(data, (a,), lambda g: (g * (1.0 - data * data),))


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)
    return _result(data, (a,), lambda g: (g * (a.data > 0),))


def softmax(a: Tensor) -> Tensor:
    data = _softmax_np(a.data)

    def backward(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - inner),)

    return _result(data, (a,), backward)


def _softmax_np(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(data) * g.sum(axis=-1, keepdims=True),)

    return _result(data, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mean = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mean) * inv_std
    data = xhat * gain.data + bias.data

    def backward(g):
        n = a.shape[-1]
        g_xhat = g * gain.data
        g_a = inv_std * (
            g_xhat
            - g_xhat.mean(axis=-1, keepdims=True)
            - xhat * (g_xhat * xhat).mean(axis=-1, keepdims=True)
        )
        g_gain = _unbroadcast(g * xhat, gain.shape)
        g_bias = _unbroadcast(g, bias.shape)
        return (g_a, g_gain, g_bias)

    return _result(data, (a, gain, bias), backward)


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.dtype)
    return _result(data, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def sum_last(a: Tensor, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=-1, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = g[..., None]
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(data, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    data = np.asarray(a.data.mean(), dtype=a.dtype)
    return _result(data, (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; apply during training only."""
    if not 0.0 <= rate < 1.0:
        raise AutogradError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / np.asarray(1.0 - rate, dtype=a.dtype)
    keep = keep.astype(a.dtype)
    return _result(a.data * keep, (a,), lambda g: (g * keep,))


def scaled_dot_product(q: Tensor, k: Tensor, v: Tensor, mask: Tensor | None = None) -> Tensor:
    """Attention weights from scaled q/k dot products, applied to v.

    ``mask`` is additive: 0 where attending is allowed, a large
    negative constant (``NEG_INF``) where blocked.
    """
    if q.shape[-1] != k.shape[-1]:
        raise AutogradError(f"query/key dim mismatch: {q.shape} vs {k.shape}")
    scores = scale(matmul(q, transpose(k)), 1.0 / np.sqrt(q.shape[-1]))
    if mask is not None:
        scores = add(scores, mask)
    return matmul(softmax(scores), v)


def rel_shift(p: Tensor, n_keys: int, query_offset: int) -> Tensor:
    """Gather per-distance scores into a (query, key) score matrix.

    ``p`` has one column per backward distance d >= 0; output column j
    for query row i reads ``p[i, query_offset + i - j]``.  Negative
    distances (future keys) read column 0 and must be masked out by the
    caller.
    """
    n_q, n_dist = p.shape
    rows = np.arange(n_q)[:, None]
    dist = query_offset + rows - np.arange(n_keys)[None, :]
    valid = (dist >= 0) & (dist < n_dist)
    cols = np.where(valid, dist, 0)
    data = p.data[rows, cols] * valid

    def backward(g):
        full = np.zeros_like(p.data)
        np.add.at(full, (np.broadcast_to(rows, cols.shape)[valid], cols[valid]), g[valid])
        return (full,)

    return _result(data, (p,), backward)


def causal_mask(n_q: int, n_k: int, query_offset: int, span: int | None = None,
                dtype=DEFAULT_DTYPE) -> Tensor:
    """Additive mask blocking future keys and, optionally, keys beyond a span.

    Query row i sits at key index ``query_offset + i``; it may attend to
    keys at or before itself, and when ``span`` is set only to the most
    recent ``span`` keys (itself included).
    """
    q_pos = query_offset + np.arange(n_q)[:, None]
    k_pos = np.arange(n_k)[None, :]
    allowed = k_pos <= q_pos
    if span is not None:
        if span < 1:
            raise AutogradError("attention span must be >= 1")
        allowed &= k_pos > q_pos - span
    return Tensor(np.where(allowed, 0.0, NEG_INF).astype(dtype))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    per_input: list

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(f, xs, eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of scalar-valued ``f`` to central differences.

    ``f`` must be deterministic (disable dropout).  Inputs should be
    float64 for the comparison to be meaningful at the default
    tolerance.  The relative error per element is
    ``|a - n| / (|a| + |n| + eps)``.
    """
    xs = [xs] if isinstance(xs, Tensor) else list(xs)
    for x in xs:
        x.requires_grad = True
        x.zero_grad()
    with Tape() as tape:
        loss = f(*xs)
        grads = tape.backward(loss, leaves=xs)

    per_input = []
    worst = 0.0
    for x in xs:
        analytic = grads[x]
        numeric = np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(*xs).item()
            flat[i] = orig - eps
            lo = f(*xs).item()
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * eps)
        err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + eps)
        per_input.append(err)
        if err.size:
            worst = max(worst, float(err.max()))
    return GradCheckReport(max_rel_err=worst, tol=tol, per_input=per_input)
