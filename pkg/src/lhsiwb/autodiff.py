"""Dense float64 tensors with taped reverse-mode differentiation.

Forward values are computed eagerly with numpy. When a Tape is active, every
operation involving a gradient-carrying tensor appends a node holding the
saved inputs and a vector-Jacobian product; Tape.backward replays the nodes
in exact reverse execution order and accumulates gradients keyed by tensor
identity. With no active tape the same functions are plain numpy code, which
is the fast path used for inference and metrics.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import ContractViolation, NumericsError

_STATE = threading.local()


def _active_tape():
    return getattr(_STATE, "tape", None)


class Tensor:
    """A dense n-dimensional float64 value, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # arithmetic sugar
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Gradients:
    """Gradient map produced by Tape.backward, keyed by tensor identity."""

    def __init__(self, table: dict):
        self._table = table

    def wrt(self, t: Tensor) -> np.ndarray:
        """d loss / d t; zero for tensors the loss does not depend on."""
        got = self._table.get(id(t))
        if got is None:
            return np.zeros_like(t.data)
        return got[1]

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._table


class Tape:
    """Ordered record of executed operations for one forward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        self._prev = _active_tape()
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = self._prev
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> Gradients:
        """Accumulate d loss / d leaf for every recorded tensor."""
        if loss.data.size != 1:
            raise ContractViolation(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        acc: dict[int, list] = {id(loss): [loss, np.ones_like(loss.data)]}
        for node in reversed(self._nodes):
            entry = acc.get(id(node.out))
            if entry is None:
                continue
            grads = node.vjp(entry[1])
            for t, g in zip(node.inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                key = id(t)
                held = acc.get(key)
                if held is None:
                    acc[key] = [t, np.asarray(g, dtype=np.float64)]
                else:
                    held[1] = held[1] + g
        return Gradients(acc)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _record(out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._nodes.append(_Node(out, tuple(inputs), vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ContractViolation(
            f"{op}: shapes {a.data.shape} and {b.data.shape} do not conform"
        ) from None


# ---------------------------------------------------------------------------
# elementwise binary ops


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data)

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data)

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data)

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _record(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "div")
    out = Tensor(a.data / b.data)

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _record(out, (a, b), vjp)


def minimum(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "minimum")
    out = Tensor(np.minimum(a.data, b.data))

    def vjp(g):
        take_a = a.data <= b.data
        return (
            _unbroadcast(g * take_a, a.data.shape),
            _unbroadcast(g * ~take_a, b.data.shape),
        )

    return _record(out, (a, b), vjp)


def maximum(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a, b, "maximum")
    out = Tensor(np.maximum(a.data, b.data))

    def vjp(g):
        take_a = a.data >= b.data
        return (
            _unbroadcast(g * take_a, a.data.shape),
            _unbroadcast(g * ~take_a, b.data.shape),
        )

    return _record(out, (a, b), vjp)


def atan2(y, x) -> Tensor:
    y, x = _coerce(y), _coerce(x)
    _check_broadcast(y, x, "atan2")
    out = Tensor(np.arctan2(y.data, x.data))

    def vjp(g):
        denom = x.data * x.data + y.data * y.data
        scale = np.where(denom > 0.0, g / np.where(denom > 0.0, denom, 1.0), 0.0)
        return (
            _unbroadcast(scale * x.data, y.data.shape),
            _unbroadcast(-scale * y.data, x.data.shape),
        )

    return _record(out, (y, x), vjp)


# ---------------------------------------------------------------------------
# elementwise unary ops


def neg(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def absolute(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.abs(a.data))
    return _record(out, (a,), lambda g: (g * np.sign(a.data),))


def exp(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.exp(a.data))
    return _record(out, (a,), lambda g: (g * out.data,))


def log(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.sqrt(a.data))

    def vjp(g):
        # subgradient 0 at the origin, where 1/(2*sqrt) blows up
        safe = np.where(out.data > 0.0, out.data, 1.0)
        return (np.where(out.data > 0.0, g * 0.5 / safe, 0.0),)

    return _record(out, (a,), vjp)


def power(a, p: float) -> Tensor:
    a = _coerce(a)
    p = float(p)
    out = Tensor(a.data**p)

    def vjp(g):
        if p == 2.0:
            return (g * 2.0 * a.data,)
        base = a.data
        if p < 1.0:
            safe = np.where(base != 0.0, base, 1.0)
            return (np.where(base != 0.0, g * p * safe ** (p - 1.0), 0.0),)
        return (g * p * base ** (p - 1.0),)

    return _record(out, (a,), vjp)


def sin(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.sin(a.data))
    return _record(out, (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.cos(a.data))
    return _record(out, (a,), lambda g: (-g * np.sin(a.data),))


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(_sigmoid_np(a.data))
    return _record(out, (a,), lambda g: (g * out.data * (1.0 - out.data),))


def softplus(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.logaddexp(0.0, a.data))

    def vjp(g):
        return (g * _sigmoid_np(a.data),)

    return _record(out, (a,), vjp)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def silu(a) -> Tensor:
    a = _coerce(a)
    s = _sigmoid_np(a.data)
    out = Tensor(a.data * s)

    def vjp(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return _record(out, (a,), vjp)


def tanh(a) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.tanh(a.data))
    return _record(out, (a,), lambda g: (g * (1.0 - out.data * out.data),))


def clamp(a, lo: float, hi: float) -> Tensor:
    a = _coerce(a)
    if not lo <= hi:
        raise ContractViolation(f"clamp bounds inverted: lo={lo} > hi={hi}")
    out = Tensor(np.clip(a.data, lo, hi))

    def vjp(g):
        inside = (a.data > lo) & (a.data < hi)
        return (g * inside,)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions and normalizations


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _record(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _coerce(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a) -> Tensor:
    """Softmax over the last axis, numerically stabilized."""
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    val = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(val)

    def vjp(g):
        dot = np.sum(g * out.data, axis=-1, keepdims=True)
        return (out.data * (g - dot),)

    return _record(out, (a,), vjp)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    a = _coerce(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = Tensor(xhat)

    def vjp(g):
        m = g.mean(axis=-1, keepdims=True)
        mx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - m - xhat * mx),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# structural ops


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    out = Tensor(np.transpose(a.data, axes))
    inv = tuple(np.argsort(axes))
    return _record(out, (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.data.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i in range(len(ts)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _record(out, tuple(ts), vjp)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = _coerce(a)
    if start < 0 or start + length > a.data.shape[axis]:
        raise ContractViolation(
            f"narrow out of range: axis {axis} start {start} length {length} "
            f"for shape {a.data.shape}"
        )
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    out = Tensor(a.data[tuple(sl)])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[tuple(sl)] = g
        return (full,)

    return _record(out, (a,), vjp)


def split(a, sizes: Sequence[int], axis: int = 0) -> list:
    a = _coerce(a)
    if sum(sizes) != a.data.shape[axis]:
        raise ContractViolation(
            f"split sizes {tuple(sizes)} do not cover axis {axis} of {a.data.shape}"
        )
    outs, start = [], 0
    for s in sizes:
        outs.append(narrow(a, axis, start, s))
        start += s
    return outs


def gather1d(src, index: np.ndarray) -> Tensor:
    """Look up a 1-D table at integer indices of any shape."""
    src = _coerce(src)
    if src.data.ndim != 1:
        raise ContractViolation("gather1d expects a 1-D source")
    idx = np.asarray(index)
    out = Tensor(src.data[idx])

    def vjp(g):
        gs = np.zeros_like(src.data)
        np.add.at(gs, idx.reshape(-1), np.asarray(g).reshape(-1))
        return (gs,)

    return _record(out, (src,), vjp)


def take_rows(src, index: np.ndarray) -> Tensor:
    """Gather rows along axis 0 by a 1-D integer index."""
    src = _coerce(src)
    idx = np.asarray(index)
    out = Tensor(src.data[idx])

    def vjp(g):
        gs = np.zeros_like(src.data)
        np.add.at(gs, idx, g)
        return (gs,)

    return _record(out, (src,), vjp)


def scatter_add(base, index: np.ndarray, updates) -> Tensor:
    """Return base with updates summed into rows given by index (axis 0)."""
    base, updates = _coerce(base), _coerce(updates)
    idx = np.asarray(index)
    val = base.data.copy()
    np.add.at(val, idx, updates.data)
    out = Tensor(val)

    def vjp(g):
        return g, g[idx]

    return _record(out, (base, updates), vjp)


# ---------------------------------------------------------------------------
# linear algebra, convolution, scans


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ContractViolation("matmul operands must have ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ContractViolation(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    ash, bsh = a.data.shape, b.data.shape

    if b.data.ndim == 2:
        # stack of vectors times one matrix: a single GEMM on flattened rows
        a2 = np.ascontiguousarray(a.data.reshape(-1, ash[-1]))
        out = Tensor(np.matmul(a2, b.data).reshape(ash[:-1] + (bsh[-1],)))

        def vjp(g):
            g2 = np.ascontiguousarray(g.reshape(-1, bsh[-1]))
            ga = np.matmul(g2, b.data.T).reshape(ash)
            gb = np.matmul(a2.T, g2)
            return ga, gb

        return _record(out, (a, b), vjp)

    if a.data.ndim == b.data.ndim and ash[:-2] == bsh[:-2]:
        # conforming batched product: flatten the batch axes to one
        m, ka = ash[-2], ash[-1]
        kb, n = bsh[-2], bsh[-1]
        a3 = np.ascontiguousarray(a.data.reshape(-1, m, ka))
        b3 = np.ascontiguousarray(b.data.reshape(-1, kb, n))
        out = Tensor(np.matmul(a3, b3).reshape(ash[:-1] + (n,)))

        def vjp(g):
            g3 = np.ascontiguousarray(g.reshape(-1, m, n))
            ga = np.matmul(g3, b3.transpose(0, 2, 1)).reshape(ash)
            gb = np.matmul(a3.transpose(0, 2, 1), g3).reshape(bsh)
            return ga, gb

        return _record(out, (a, b), vjp)

    out = Tensor(np.matmul(a.data, b.data))

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast_mat(ga, a.data.shape), _unbroadcast_mat(gb, b.data.shape)

    return _record(out, (a, b), vjp)


def affine(x, w, b) -> Tensor:
    """Fused x @ w + b for a 2-D weight and 1-D bias."""
    x, w, b = _coerce(x), _coerce(w), _coerce(b)
    if w.data.ndim != 2 or b.data.ndim != 1 or w.data.shape[1] != b.data.shape[0]:
        raise ContractViolation(
            f"affine needs w (k, n) and b (n,), got {w.data.shape}, {b.data.shape}"
        )
    if x.data.shape[-1] != w.data.shape[0]:
        raise ContractViolation(
            f"affine inner dimensions differ: {x.data.shape} @ {w.data.shape}"
        )
    xsh = x.data.shape
    x2 = np.ascontiguousarray(x.data.reshape(-1, xsh[-1]))
    out = Tensor((np.matmul(x2, w.data) + b.data).reshape(xsh[:-1] + (w.data.shape[1],)))

    def vjp(g):
        g2 = np.ascontiguousarray(g.reshape(-1, w.data.shape[1]))
        gx = np.matmul(g2, w.data.T).reshape(xsh)
        gw = np.matmul(x2.T, g2)
        return gx, gw, g2.sum(axis=0)

    return _record(out, (x, w, b), vjp)


def _unbroadcast_mat(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i in range(len(shape) - 2) if shape[i] == 1 and g.shape[i] != 1
    )
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def dwconv1d(x, w) -> Tensor:
    """Depthwise 1-D convolution along axis -2 with same zero padding.

    x: (..., L, C); w: (K, C) with odd K. Each channel is filtered by its own
    length-K kernel.
    """
    x, w = _coerce(x), _coerce(w)
    K, C = w.data.shape
    if K % 2 != 1:
        raise ContractViolation(f"dwconv1d kernel length must be odd, got {K}")
    if x.data.shape[-1] != C:
        raise ContractViolation(
            f"dwconv1d channel mismatch: input {x.data.shape} vs kernel {w.data.shape}"
        )
    L = x.data.shape[-2]
    pad = K // 2
    padding = [(0, 0)] * (x.data.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, padding)
    val = np.zeros_like(x.data)
    for k in range(K):
        val += w.data[k] * xp[..., k : k + L, :]
    out = Tensor(val)

    def vjp(g):
        gp = np.pad(g, padding)
        gx = np.zeros_like(x.data)
        for k in range(K):
            gx += w.data[k] * gp[..., 2 * pad - k : 2 * pad - k + L, :]
        g2 = g.reshape(-1, L, C)
        xp2 = xp.reshape(g2.shape[0], L + 2 * pad, C)
        gw = np.empty_like(w.data)
        for k in range(K):
            gw[k] = np.einsum("blc,blc->c", g2, xp2[:, k : k + L, :])
        return gx, gw

    return _record(out, (x, w), vjp)


def cumsum(a, axis: int = 0) -> Tensor:
    a = _coerce(a)
    out = Tensor(np.cumsum(a.data, axis=axis))

    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _record(out, (a,), vjp)


def linear_scan(decay, update) -> Tensor:
    """First-order recurrence h[t] = decay[t] * h[t-1] + update[t] over axis 0.

    The initial state is zero. Exposed as a primitive with a reverse-time
    adjoint so the tape stays linear in sequence length.
    """
    decay, update = _coerce(decay), _coerce(update)
    if decay.data.shape != update.data.shape:
        raise ContractViolation(
            f"linear_scan shapes differ: {decay.data.shape} vs {update.data.shape}"
        )
    if decay.data.ndim < 1 or decay.data.shape[0] < 1:
        raise ContractViolation("linear_scan needs at least one step")
    shape = decay.data.shape
    L = shape[0]
    m = int(np.prod(shape[1:], dtype=np.int64)) if decay.data.ndim > 1 else 1
    a2 = np.ascontiguousarray(decay.data.reshape(L, m))
    b2 = np.ascontiguousarray(update.data.reshape(L, m))
    h2 = np.empty_like(a2)
    _kernels.scan_forward(a2, b2, h2)
    out = Tensor(h2.reshape(shape))

    def vjp(g):
        g2 = np.ascontiguousarray(np.asarray(g).reshape(L, m))
        da = np.empty_like(a2)
        db = np.empty_like(a2)
        _kernels.scan_backward(a2, h2, g2, da, db)
        return da.reshape(shape), db.reshape(shape)

    return _record(out, (decay, update), vjp)


def selective_scan_core(delta, A, Bm, Cm, x) -> Tensor:
    """Fused content-aware state-space recurrence.

    Per batch b, step t, channel c, state n:
        abar = exp(delta[b,t,c] * A[c,n])
        bbar_x = ((abar - 1) / A[c,n]) * Bm[b,t,n] * x[b,t,c]
        h = abar * h_prev + bbar_x
        y[b,t,c] = sum_n Cm[b,t,n] * h

    delta, x: (B, L, C); A: (C, N); Bm, Cm: (B, L, N). A must be negative and
    delta positive so that abar lies in (0, 1).
    """
    delta, A, Bm, Cm, x = (_coerce(v) for v in (delta, A, Bm, Cm, x))
    Bb, L, C = delta.data.shape
    N = A.data.shape[1]
    if A.data.shape != (C, N):
        raise ContractViolation(f"A shape {A.data.shape} incompatible with C={C}")
    if Bm.data.shape != (Bb, L, N) or Cm.data.shape != (Bb, L, N):
        raise ContractViolation("B/C projections must have shape (B, L, N)")
    if x.data.shape != (Bb, L, C):
        raise ContractViolation("x must have shape (B, L, C)")
    if np.any(delta.data <= 0.0):
        raise ContractViolation("selective scan requires delta > 0")
    if np.any(A.data >= 0.0):
        raise ContractViolation("selective scan requires diagonal A < 0")

    d_ = np.ascontiguousarray(delta.data)
    A_ = np.ascontiguousarray(A.data)
    B_ = np.ascontiguousarray(Bm.data)
    C_ = np.ascontiguousarray(Cm.data)
    x_ = np.ascontiguousarray(x.data)
    y = np.empty_like(d_)
    h = np.empty((Bb, L, C, N))
    _kernels.sscan_forward(d_, A_, B_, C_, x_, y, h)
    if not np.all(np.isfinite(y)):
        bad = np.argwhere(~np.isfinite(h))
        t_bad = int(bad[0][1]) if len(bad) else -1
        raise NumericsError(f"selective scan produced non-finite state at step {t_bad}")
    out = Tensor(y)

    def vjp(g):
        gy = np.ascontiguousarray(np.asarray(g))
        ddelta = np.zeros_like(d_)
        dApart = np.zeros((Bb, C, N))
        dB = np.zeros_like(B_)
        dC = np.zeros_like(C_)
        dx = np.zeros_like(x_)
        _kernels.sscan_backward(d_, A_, B_, C_, x_, h, gy,
                                ddelta, dApart, dB, dC, dx)
        return ddelta, dApart.sum(axis=0), dB, dC, dx

    return _record(out, (delta, A, Bm, Cm, x), vjp)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn, point, eps: float = 1e-5, coord_limit=None, rng=None) -> float:
    """Compare taped gradients of fn against central finite differences.

    fn maps a list of leaf Tensors to a scalar Tensor. point is a sequence of
    arrays giving the leaf values. Returns the max over probed coordinates of
    |analytic - numeric| / max(1, |numeric|). When coord_limit is given,
    leaves with more coordinates are probed at a random subset.
    """
    if eps <= 0:
        raise ContractViolation("grad_check requires eps > 0")
    leaves = [Tensor(np.array(p, dtype=np.float64, copy=True), requires_grad=True)
              for p in point]
    with Tape() as tape:
        out = fn(leaves)
    if out.data.size != 1:
        raise ContractViolation("grad_check requires a scalar-valued fn")
    grads = tape.backward(out)
    worst = 0.0
    for li, leaf in enumerate(leaves):
        analytic = grads.wrt(leaf).reshape(-1)
        flat = leaf.data.reshape(-1)
        n = flat.size
        if coord_limit is not None and n > coord_limit:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=coord_limit, replace=False)
        else:
            coords = range(n)
        for j in coords:
            orig = flat[j]
            flat[j] = orig + eps
            fp = fn(leaves).item()
            flat[j] = orig - eps
            fm = fn(leaves).item()
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericsError(
                    f"non-finite probe value at leaf {li}, coordinate {int(j)}"
                )
            numeric = (fp - fm) / (2.0 * eps)
            rel = abs(analytic[j] - numeric) / max(1.0, abs(numeric))
            if rel > worst:
                worst = rel
    return worst
