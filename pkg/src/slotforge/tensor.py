"""Dense float64 tensors with reverse-mode automatic differentiation.

Values are contiguous row-major numpy arrays of rank 0..2. Every op that
receives a grad-requiring input records a tape entry (define-by-run); a
backward pass replays the tape in reverse and accumulates `.grad` on the
requires_grad leaves. Forward outputs are checked for NaN/Inf and raise
NonFiniteError rather than propagating silently.

Broadcasting is limited to: equal shapes, scalars, a trailing row vector
(n,d)op(d,) and a column (n,d)op(n,1). Anything else is a ShapeError.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np


class TensorError(Exception):
    pass


class ShapeError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


_UIDS = itertools.count()
_NO_GRAD = 0


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value produced by {op}")
    return arr


class Tensor:
    """A dense float64 value, optionally participating in the grad tape."""

    __slots__ = ("data", "requires_grad", "grad", "uid")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if arr.ndim > 2:
            raise ShapeError(f"rank {arr.ndim} > 2 not supported (shape {arr.shape})")
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.uid = next(_UIDS)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        active_tape().backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; everything routes through the module-level ops
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class GradTape:
    """Ordered record of primitive ops; creation order is topological."""

    def __init__(self):
        # entry: (out_uid, parent tensors, fn(grad_out)->per-parent grads)
        self._entries: list[tuple[int, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, parents: Sequence[Tensor], fn: Callable) -> None:
        self._entries.append((out.uid, tuple(parents), fn))
        self._produced.add(out.uid)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward from non-scalar of shape {loss.shape}")
        by_out = {uid: i for i, (uid, _, _) in enumerate(self._entries)}
        # restrict the reverse sweep to the ancestry of the loss node
        needed: set[int] = set()
        stack = [loss.uid]
        while stack:
            uid = stack.pop()
            if uid in needed or uid not in by_out:
                continue
            needed.add(uid)
            for p in self._entries[by_out[uid]][1]:
                stack.append(p.uid)
        grads: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
        for out_uid, parents, fn in reversed(self._entries):
            if out_uid not in needed or out_uid not in grads:
                continue
            parent_grads = fn(grads[out_uid])
            for p, g in zip(parents, parent_grads):
                if g is None:
                    continue
                if p.uid in grads:
                    grads[p.uid] = grads[p.uid] + g
                else:
                    grads[p.uid] = g
                if p.requires_grad and p.uid not in self._produced:
                    p.grad = g.copy() if p.grad is None else p.grad + g


_TAPE = GradTape()


def active_tape() -> GradTape:
    return _TAPE


def reset_tape() -> None:
    global _TAPE
    _TAPE = GradTape()


@contextmanager
def fresh_tape():
    """Swap in a new tape for the duration of the block (one training step)."""
    global _TAPE
    saved = _TAPE
    _TAPE = GradTape()
    try:
        yield _TAPE
    finally:
        _TAPE = saved


@contextmanager
def no_grad():
    """Disable tape recording; forward values (and NaN checks) still run."""
    global _NO_GRAD
    _NO_GRAD += 1
    try:
        yield
    finally:
        _NO_GRAD -= 1


def grad_enabled() -> bool:
    return _NO_GRAD == 0


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim and not data.flags["C_CONTIGUOUS"]:
        data = np.ascontiguousarray(data)
    _check_finite(data, op)
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = track
    out.grad = None
    out.uid = next(_UIDS)
    if track:
        _TAPE.record(out, parents, fn)
    return out


def _broadcast_ok(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    if a == b or a == () or b == ():
        return True
    if len(a) == 2 and (b == (a[1],) or b == (a[0], 1) or b == (1, a[1])):
        return True
    if len(b) == 2 and (a == (b[1],) or a == (b[0], 1) or a == (1, b[1])):
        return True
    return False


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, fwd, bwd_a, bwd_b, op: str) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    with np.errstate(all="ignore"):
        out = fwd(a.data, b.data)

    def backward(g):
        return (
            _unbroadcast(bwd_a(g, a.data, b.data), a.shape),
            _unbroadcast(bwd_b(g, a.data, b.data), b.shape),
        )

    return _make(out, (a, b), backward, op)


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def div(a, b) -> Tensor:
    return _binary(
        a, b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
        "div",
    )


def neg(a) -> Tensor:
    a = _coerce(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return (g @ b.data.T, a.data.T @ g)

    return _make(out, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: rank-2 required, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def _unary(a, fwd, bwd, op: str) -> Tensor:
    a = _coerce(a)
    with np.errstate(all="ignore"):
        out = fwd(a.data)

    def backward(g, out=out):
        return (bwd(g, a.data, out),)

    return _make(out, (a,), backward, op)


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda g, x, y: g * y, "exp")


def log(a) -> Tensor:
    return _unary(a, np.log, lambda g, x, y: g / x, "log")


def sqrt(a) -> Tensor:
    return _unary(a, np.sqrt, lambda g, x, y: g * 0.5 / y, "sqrt")


def sigmoid(a) -> Tensor:
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _unary(a, fwd, lambda g, x, y: g * y * (1.0 - y), "sigmoid")


def tanh(a) -> Tensor:
    return _unary(a, np.tanh, lambda g, x, y: g * (1.0 - y * y), "tanh")


def relu(a) -> Tensor:
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda g, x, y: g * (x > 0), "relu")


def clip(a, lo: float, hi: float) -> Tensor:
    return _unary(
        a,
        lambda x: np.clip(x, lo, hi),
        lambda g, x, y: g * ((x >= lo) & (x <= hi)),
        "clip",
    )


def clip_min(a, lo: float) -> Tensor:
    return _unary(a, lambda x: np.maximum(x, lo), lambda g, x, y: g * (x >= lo), "clip_min")


def _axis_check(a: Tensor, axis) -> None:
    if axis is not None and not (0 <= axis < a.data.ndim):
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    _axis_check(a, axis)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    _axis_check(a, axis)
    n = a.data.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.shape).copy(),)

    return _make(out, (a,), backward, "mean")


def softmax(a, axis: int = -1) -> Tensor:
    """Max-shifted softmax along `axis`; rows sum to 1 within 1e-12."""
    a = _coerce(a)
    ax = axis if axis >= 0 else a.data.ndim + axis
    _axis_check(a, ax)
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def backward(g, out=out):
        dot = (g * out).sum(axis=ax, keepdims=True)
        return ((g - dot) * out,)

    return _make(out, (a,), backward, "softmax")


def layer_norm(a, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize each row (last axis) to zero mean / unit variance.

    Optional affine gain/bias of shape (d,). A constant row normalizes to
    zeros (the eps in the denominator keeps the zero-variance case finite).
    """
    a = _coerce(a)
    if a.data.ndim == 0:
        raise ShapeError("layer_norm: rank >= 1 required")
    d = a.shape[-1]
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    parents: list[Tensor] = [a]
    out = xhat
    if gain is not None:
        if gain.shape != (d,):
            raise ShapeError(f"layer_norm: gain shape {gain.shape} != ({d},)")
        out = out * gain.data
        parents.append(gain)
    if bias is not None:
        if bias.shape != (d,):
            raise ShapeError(f"layer_norm: bias shape {bias.shape} != ({d},)")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gy = g * gain.data if gain is not None else g
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * xhat).mean(axis=-1, keepdims=True)
        dx = (gy - m1 - xhat * m2) * inv
        grads: list[np.ndarray] = [dx]
        if gain is not None:
            gg = g * xhat
            grads.append(gg.sum(axis=0) if gg.ndim == 2 else gg)
        if bias is not None:
            grads.append(g.sum(axis=0) if g.ndim == 2 else g)
        return tuple(grads)

    return _make(out, parents, backward, "layer_norm")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b): the standard affine map over row vectors."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_coerce(p) for p in parts]
    if not parts:
        raise ShapeError("concat: empty input list")
    ndim = parts[0].data.ndim
    if any(p.data.ndim != ndim for p in parts):
        raise ShapeError(f"concat: mixed ranks {[p.shape for p in parts]}")
    if not (0 <= axis < ndim):
        raise ShapeError(f"concat: axis {axis} out of range for rank {ndim}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return _make(out, parts, backward, "concat")


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows by integer index; backward scatter-adds into the source."""
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows: rank-2 required, got {a.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), backward, "gather_rows")


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    a = _coerce(a)
    if a.data.ndim != 2 or not (0 <= lo < hi <= a.shape[1]):
        raise ShapeError(f"slice_cols: bad range [{lo},{hi}) for shape {a.shape}")
    out = a.data[:, lo:hi].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        return (full,)

    return _make(out, (a,), backward, "slice_cols")


def bce(p, targets, weights=None) -> Tensor:
    """Mean (optionally weighted) binary cross-entropy on probabilities.

    `targets` and `weights` are constants. p must lie in (0,1); exact 0/1
    against the opposite target raises via the NaN/Inf policy.
    """
    p = _coerce(p)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeError(f"bce: target shape {t.shape} != input shape {p.shape}")
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != p.shape:
        raise ShapeError(f"bce: weight shape {w.shape} != input shape {p.shape}")
    n = max(p.data.size, 1)
    elem = -(t * np.log(p.data) + (1.0 - t) * np.log(1.0 - p.data))
    out = np.asarray((w * elem).sum() / n)

    def backward(g):
        return (g * w * (p.data - t) / (p.data * (1.0 - p.data)) / n,)

    return _make(out, (p,), backward, "bce")


def bce_logits(x, targets, weights=None) -> Tensor:
    """Mean (optionally weighted) BCE on logits, the numerically safe form."""
    x = _coerce(x)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != x.shape:
        raise ShapeError(f"bce_logits: target shape {t.shape} != input shape {x.shape}")
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=np.float64)
    n = max(x.data.size, 1)
    z = x.data
    elem = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray((w * elem).sum() / n)
    sig = np.empty_like(z)
    pos = z >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    sig[~pos] = ez / (1.0 + ez)

    def backward(g):
        return (g * w * (sig - t) / n,)

    return _make(out, (x,), backward, "bce_logits")


def cross_entropy(logits: Tensor, labels, reduce: str = "mean") -> Tensor:
    """Softmax cross-entropy of integer class labels against logit rows."""
    logits = _coerce(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: rank-2 logits required, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ShapeError(f"cross_entropy: label out of range for {k} classes")
    if reduce not in ("mean", "sum"):
        raise ValueError(f"cross_entropy: unknown reduce '{reduce}'")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    per_row = logz - shifted[np.arange(n), labels]
    scale = 1.0 / n if reduce == "mean" else 1.0
    out = np.asarray(per_row.sum() * scale)
    probs = np.exp(shifted - logz[:, None])

    def backward(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return (g * scale * d,)

    return _make(out, (logits,), backward, "cross_entropy")


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log-sum-exp of a rank-2 tensor, returned as (n,1)."""
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ShapeError(f"logsumexp_rows: rank-2 required, got {a.shape}")
    m = a.data.max(axis=1, keepdims=True)
    out = m + np.log(np.exp(a.data - m).sum(axis=1, keepdims=True))
    soft = np.exp(a.data - out)

    def backward(g):
        return (g * soft,)

    return _make(out, (a,), backward, "logsumexp")


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def finite_diff_check(f: Callable[[], Tensor], wrt: Sequence[Tensor],
                      eps: float = 1e-5) -> float:
    """Compare analytic gradients of the scalar f() against central differences.

    f must be deterministic and rebuild its graph from the same `wrt` tensor
    objects on each call. Returns the max over coordinates of
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if not (1e-6 <= eps <= 1e-4):
        raise ValueError(f"eps {eps} outside [1e-6, 1e-4]")
    wrt = list(wrt)
    zero_grads(wrt)
    with fresh_tape() as tape:
        loss = f()
        if loss.data.size != 1:
            raise ShapeError(f"finite_diff_check: f returned shape {loss.shape}")
        tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wrt]
    worst = 0.0
    with no_grad():
        for t, an in zip(wrt, analytic):
            flat = t.data.reshape(-1)
            an_flat = an.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = f().item()
                flat[i] = orig - eps
                lo = f().item()
                flat[i] = orig
                num = (hi - lo) / (2.0 * eps)
                denom = max(1.0, abs(an_flat[i]), abs(num))
                worst = max(worst, abs(an_flat[i] - num) / denom)
    zero_grads(wrt)
    return worst
