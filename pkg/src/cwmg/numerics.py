"""Dense-array math with tape-based reverse-mode differentiation.

Arrays wrap numpy buffers. While a :class:`Tape` is active every primitive
appends a record ``(output, inputs, vjp)``; :func:`backward` walks the records
in reverse and accumulates vector-Jacobian products. Outside a tape the same
primitives simply compute values, which is what inference and the finite
difference oracle use.

Training runs in float32. :func:`precision` switches the dtype used for newly
created arrays (gradient checks run in float64); primitives always keep the
dtype of their operands.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, ParameterError, TokenIndexError

_state = threading.local()


def _dtype():
    return getattr(_state, "dtype", np.float32)


def _tape_stack():
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


@contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new arrays and constants."""
    prev = _dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


def default_dtype():
    return _dtype()


class Array:
    """An immutable n-dimensional array that can take part in a tape."""

    __slots__ = ("data", "name", "__weakref__")

    def __init__(self, data, name=None, dtype=None):
        if isinstance(data, Array):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _dtype()
        self.data = np.asarray(data, dtype=dtype)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def is_finite(self):
        return bool(np.all(np.isfinite(self.data)))

    def item(self):
        return self.data.item()

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Array{label}(shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


@dataclass
class _Record:
    out: Array
    inputs: tuple
    vjp: Callable


@dataclass
class Tape:
    """Ordered log of primitive applications; use as a context manager."""

    records: list = field(default_factory=list)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.records)


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _as_array(x, like=None):
    if isinstance(x, Array):
        return x
    if isinstance(x, np.ndarray) and x.dtype.kind == "f":
        return Array(x)
    dtype = like.dtype if like is not None else _dtype()
    return Array(np.asarray(x, dtype=dtype), dtype=dtype)


def _emit(data, inputs, vjp):
    out = Array.__new__(Array)
    out.data = data if isinstance(data, np.ndarray) else np.asarray(data)
    out.name = None
    stack = getattr(_state, "tapes", None)
    if stack:
        stack[-1].records.append(_Record(out, tuple(inputs), vjp))
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural primitives
# ---------------------------------------------------------------------------


def add(a, b):
    a = _as_array(a, b if isinstance(b, Array) else None)
    b = _as_array(b, a)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from None
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a = _as_array(a, b if isinstance(b, Array) else None)
    b = _as_array(b, a)
    try:
        out = a.data - b.data
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from None
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a = _as_array(a, b if isinstance(b, Array) else None)
    b = _as_array(b, a)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from None
    return _emit(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a, b):
    """Matrix product; leading dimensions broadcast like ``np.matmul``."""
    a, b = _as_array(a), _as_array(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit(out, (a, b), vjp)


def sum_(x, axis=None):
    x = _as_array(x)
    out = np.sum(x.data, axis=axis)
    out = np.asarray(out, dtype=x.dtype)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _emit(out, (x,), vjp)


def mean(x, axis=None):
    x = _as_array(x)
    n = x.size if axis is None else np.prod([x.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(x, axis), 1.0 / float(n))


def reshape(x, shape):
    x = _as_array(x)
    out = x.data.reshape(shape)
    return _emit(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    x = _as_array(x)
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _emit(out, (x,), lambda g: (np.transpose(g, inv),))


def concat(arrays: Sequence[Array], axis=-1):
    arrays = [_as_array(a) for a in arrays]
    try:
        out = np.concatenate([a.data for a in arrays], axis=axis)
    except ValueError:
        shapes = [a.shape for a in arrays]
        raise DimensionError(f"cannot concatenate shapes {shapes}") from None
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit(out, arrays, vjp)


def take(table, ids):
    """Row lookup ``table[ids]`` for a 2-D table and an integer index array."""
    table = _as_array(table)
    ids = np.asarray(ids)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = int(ids[(ids < 0) | (ids >= n)].flat[0])
        raise TokenIndexError(f"id {bad} out of range for table with {n} rows")
    out = table.data[ids]

    def vjp(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return _emit(out, (table,), vjp)


def elu_plus_one(x):
    """Positive feature map elu(x) + 1 used by linear attention."""
    x = _as_array(x)
    pos = x.data > 0
    e = np.exp(np.minimum(x.data, 0))
    out = np.where(pos, x.data + 1, e).astype(x.dtype)
    return _emit(out, (x,), lambda g: (g * np.where(pos, 1, e).astype(x.dtype),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    x = _as_array(x)
    x2 = x.data * x.data
    t = np.tanh(_GELU_C * x.data * (1 + 0.044715 * x2))
    out = 0.5 * x.data * (1 + t)

    def vjp(g):
        du = _GELU_C * (1 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1 + t) + 0.5 * x.data * (1 - t * t) * du),)

    return _emit(out, (x,), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise over the last axis then apply an affine map."""
    x, gain, bias = _as_array(x), _as_array(gain), _as_array(bias)
    n = x.shape[-1]
    xc = x.data - x.data.sum(axis=-1, keepdims=True) / n
    inv = 1.0 / np.sqrt((xc * xc).sum(axis=-1, keepdims=True) / n + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        gx_hat = g * gain.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit(out.astype(x.dtype), (x, gain, bias), vjp)


def _softmax_np(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(logits):
    """Softmax over the last axis, max-subtracted for stability."""
    logits = _as_array(logits)
    if logits.data.ndim == 0 or logits.shape[-1] == 0:
        raise DimensionError(f"softmax needs a non-empty last axis, got {logits.shape}")
    p = _softmax_np(logits.data)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _emit(p, (logits,), vjp)


def cross_entropy(logits, target, mask=None):
    """Mean negative log-likelihood of integer targets under softmax(logits).

    ``logits`` has classes on the last axis; ``target`` has the leading shape.
    With ``mask`` only positions where it is true contribute to the mean; an
    all-false mask yields a loss of exactly 0.
    """
    logits = _as_array(logits)
    target = np.asarray(target)
    n = logits.shape[-1] if logits.data.ndim else 0
    if n == 0:
        raise DimensionError(f"cross_entropy needs a non-empty class axis, got {logits.shape}")
    if target.shape != logits.shape[:-1]:
        raise DimensionError(f"target shape {target.shape} does not match logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= n):
        raise TokenIndexError(f"target out of range for {n} classes")
    weight = np.ones(target.shape, dtype=logits.dtype) if mask is None else np.asarray(mask, dtype=logits.dtype)
    count = float(weight.sum())
    scale = 1.0 / count if count > 0 else 0.0

    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    flat_t = target.reshape(-1)
    rows = np.arange(flat_t.size)
    picked = logp.reshape(-1, n)[rows, flat_t]
    loss = np.asarray(-(picked * weight.reshape(-1)).sum() * scale, dtype=logits.dtype)

    def vjp(g):
        grad = np.exp(logp).reshape(-1, n)
        grad[rows, flat_t] -= 1
        return ((grad * (weight.reshape(-1) * scale * g)[:, None]).reshape(logits.shape),)

    return _emit(loss, (logits,), vjp)


def causal_linear_attention(phi_q, phi_k, v, eps=1e-6, chunk=64):
    """Causal linear attention over feature-mapped queries and keys.

    out_t = phi_q_t . S_t / (phi_q_t . z_t + eps) with running prefix sums
    S_t = sum_{i<=t} phi_k_i v_i^T and z_t = sum_{i<=t} phi_k_i. Shapes are
    (..., T, F) for the features and (..., T, D) for values. Within a chunk
    the masked (chunk x chunk) score matrix is used directly; the state
    carried between chunks is the (F, D) prefix sum at the chunk boundary, so
    memory stays O(chunk^2 + F * D) per head.
    """
    phi_q, phi_k, v = _as_array(phi_q), _as_array(phi_k), _as_array(v)
    q, k, vv = phi_q.data, phi_k.data, v.data
    if q.shape != k.shape or q.shape[:-1] != vv.shape[:-1]:
        raise DimensionError(f"attention shapes disagree: q{q.shape} k{k.shape} v{vv.shape}")
    T = q.shape[-2]
    lead = q.shape[:-2]
    F, D = q.shape[-1], vv.shape[-1]
    starts = list(range(0, T, chunk))
    boundary = []
    dens = []
    out = np.empty(lead + (T, D), dtype=q.dtype)

    S_run = np.zeros(lead + (F, D), dtype=q.dtype)
    z_run = np.zeros(lead + (F,), dtype=q.dtype)
    for s in starts:
        e = min(s + chunk, T)
        qs, ks, vs = q[..., s:e, :], k[..., s:e, :], vv[..., s:e, :]
        A = np.tril(qs @ np.swapaxes(ks, -1, -2))
        num = A @ vs + qs @ S_run
        den = A.sum(axis=-1) + (qs @ z_run[..., None])[..., 0] + eps
        out[..., s:e, :] = num / den[..., None]
        boundary.append((S_run, z_run))
        dens.append(den)
        S_run = S_run + np.swapaxes(ks, -1, -2) @ vs
        z_run = z_run + ks.sum(axis=-2)

    def vjp(g):
        gq = np.empty_like(q)
        gk = np.empty_like(k)
        gv = np.empty_like(vv)
        R = np.zeros(lead + (F, D), dtype=q.dtype)
        r = np.zeros(lead + (F,), dtype=q.dtype)
        for s, (S_start, z_start), den in reversed(list(zip(starts, boundary, dens))):
            e = min(s + chunk, T)
            qs, ks, vs = q[..., s:e, :], k[..., s:e, :], vv[..., s:e, :]
            gs = g[..., s:e, :]
            g_num = gs / den[..., None]
            g_den = -(gs * out[..., s:e, :]).sum(axis=-1) / den
            A = np.tril(qs @ np.swapaxes(ks, -1, -2))
            dA = np.tril(g_num @ np.swapaxes(vs, -1, -2) + g_den[..., None])
            gq[..., s:e, :] = dA @ ks + g_num @ np.swapaxes(S_start, -1, -2) + g_den[..., None] * z_start[..., None, :]
            # later chunks see these keys/values through the carried state
            gk[..., s:e, :] = np.swapaxes(dA, -1, -2) @ qs + vs @ np.swapaxes(R, -1, -2) + r[..., None, :]
            gv[..., s:e, :] = np.swapaxes(A, -1, -2) @ g_num + ks @ R
            R = R + np.swapaxes(qs, -1, -2) @ g_num
            r = r + (np.swapaxes(qs, -1, -2) @ g_den[..., None])[..., 0]
        return gq, gk, gv

    return _emit(out, (phi_q, phi_k, v), vjp)


# ---------------------------------------------------------------------------
# reverse pass, finite differences, optimiser
# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Array, wrt: Sequence[Array]):
    """Gradients of scalar ``loss`` with respect to each array in ``wrt``.

    Arrays in ``wrt`` that the loss does not depend on get zero gradients.
    """
    if loss.data.ndim != 0 and loss.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {loss.shape}")
    grads = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    return [grads.get(id(w), np.zeros(w.shape, dtype=w.dtype)).astype(w.dtype, copy=False) for w in wrt]


def grad_check(f: Callable, point: Sequence[np.ndarray], eps=1e-6, coords=None):
    """Max relative error between tape gradients and central differences.

    ``f`` maps a list of Arrays to a scalar Array and must be deterministic.
    Everything runs in float64. The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``. ``coords``
    optionally restricts the check to ``{input index: flat indices}``.
    """
    if not (1e-6 <= eps <= 1e-3):
        raise ParameterError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    with precision(np.float64):
        xs = [np.array(p, dtype=np.float64) for p in point]
        arrays = [Array(x, dtype=np.float64) for x in xs]
        with Tape() as tape:
            loss = f(arrays)
        analytic = backward(tape, loss, arrays)

        worst = 0.0
        # the probe arrays share buffers with xs, so in-place edits are visible
        probe = [Array(x, dtype=np.float64) for x in xs]
        for i, x in enumerate(xs):
            flat = x.reshape(-1)
            grad = analytic[i].reshape(-1)
            idx = range(flat.size) if coords is None else coords.get(i, ())
            for j in idx:
                orig = flat[j]
                flat[j] = orig + eps
                hi = f(probe).item()
                flat[j] = orig - eps
                lo = f(probe).item()
                flat[j] = orig
                num = (hi - lo) / (2 * eps)
                err = abs(grad[j] - num) / max(1.0, abs(grad[j]), abs(num))
                worst = max(worst, err)
    return worst


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_by_global_norm(grads, max_norm):
    """Scale gradients so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return list(grads), norm
    scale = max_norm / (norm + 1e-12)
    return [(g * scale).astype(g.dtype) for g in grads], norm


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict

    @classmethod
    def zeros(cls, params: dict):
        return cls(
            step=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState, hyper: AdamHyper):
    """One bias-corrected adaptive-moment update; returns new params and state."""
    step = state.step + 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise DimensionError(f"{name}: param {p.shape}, grad {g.shape}, state {state.m[name].shape}")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        update = hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        new_params[name] = (p - update).astype(p.dtype)
        new_m[name] = m.astype(p.dtype)
        new_v[name] = v.astype(p.dtype)
    return new_params, AdamState(step, new_m, new_v)
