"""Minimal reverse-mode autodiff on dense float64 arrays.

Every op takes and returns :class:`Tensor`. Backward closures return one
gradient per parent (``None`` where the parent does not need one); the engine
in :func:`backward` accumulates them. Only leaves keep a ``.grad`` buffer,
so calling :func:`backward` twice without :meth:`Tensor.zero_grad` doubles
the leaf gradients and nothing else.
"""

from __future__ import annotations

import contextlib
import functools
import threading
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import DimensionError, UsageError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An N-d float64 array with an optional gradient accumulator."""

    def __init__(self, data, requires_grad: bool = False, _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._op = _op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = np.array(value, dtype=np.float64).reshape(self.data.shape)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self) -> None:
        self._grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64, copy=True).reshape(self.data.shape)
        else:
            self._grad += g

    # arithmetic sugar, used mostly by the loss functions
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
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _not_scalar(t: Tensor):
    raise UsageError(f"tensor of shape {t.shape} is not a scalar")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data, _op=op)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Propagate d loss / d leaf into every ``requires_grad`` leaf."""
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node._accumulate(g)
            continue
        grads = node._backward(g)
        for parent, pg in zip(node._parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


def _topological(root: Tensor) -> list:
    order, seen = [], {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        for parent in it:
            if parent.requires_grad and id(parent) not in seen:
                seen.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                break
        else:
            stack.pop()
            order.append(node)
    return order


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _make(data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _make(data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError as exc:
        raise DimensionError(f"cannot divide shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), bw, "div")


def power(a: Tensor, p: float) -> Tensor:
    data = a.data ** p

    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return _make(data, (a,), bw, "pow")


def log(a: Tensor) -> Tensor:
    def bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bw, "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input was inside [lo, hi]."""
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        return (g * inside,)

    return _make(np.clip(a.data, lo, hi), (a,), bw, "clip")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bw, "sigmoid")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0

    def bw(g):
        return (g * pos,)

    return _make(a.data * pos, (a,), bw, "relu")


def mul_broadcast(x: Tensor, s: Tensor) -> Tensor:
    """Reweight ``x`` (N,C,H,W) by ``s`` shaped (N,C,1,1), (N,1,H,W) or x's shape."""
    if x.ndim != 4 or s.ndim != 4:
        raise DimensionError(f"mul_broadcast expects 4-D operands, got {x.shape} and {s.shape}")
    n, c, h, w = x.shape
    if s.shape not in ((n, c, 1, 1), (n, 1, h, w), (n, c, h, w)):
        raise DimensionError(
            f"weights of shape {s.shape} do not broadcast onto {x.shape}; "
            f"expected ({n},{c},1,1) or ({n},1,{h},{w})"
        )
    return mul(x, s)


# ---------------------------------------------------------------- reductions


def tsum(a: Tensor, axis=None) -> Tensor:
    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc

    def bw(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), bw, "reshape")


def _check4(x: Tensor, name: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{name} expects an N×C×H×W tensor, got shape {x.shape}")


def global_pool(x: Tensor, mode: str = "avg") -> Tensor:
    """Per-channel spatial reduction to N×C×1×1."""
    _check4(x, "global_pool")
    n, c, h, w = x.shape
    if mode == "avg":
        def bw(g):
            return (np.broadcast_to(g / (h * w), x.shape).copy(),)

        return _make(x.data.mean(axis=(2, 3), keepdims=True), (x,), bw, "global_avg")
    if mode == "max":
        flat = x.data.reshape(n, c, h * w)
        idx = flat.argmax(axis=2)

        def bw(g):
            gx = np.zeros((n, c, h * w))
            np.put_along_axis(gx, idx[..., None], g.reshape(n, c, 1), axis=2)
            return (gx.reshape(x.shape),)

        out = np.take_along_axis(flat, idx[..., None], axis=2).reshape(n, c, 1, 1)
        return _make(out, (x,), bw, "global_max")
    raise ValueError(f"unknown pooling mode {mode!r}")


def reduce_over_channels(x: Tensor, mode: str = "avg") -> Tensor:
    """Reduce the channel axis to N×1×H×W."""
    _check4(x, "reduce_over_channels")
    c = x.shape[1]
    if mode == "avg":
        def bw(g):
            return (np.broadcast_to(g / c, x.shape).copy(),)

        return _make(x.data.mean(axis=1, keepdims=True), (x,), bw, "channel_avg")
    if mode == "max":
        idx = x.data.argmax(axis=1)[:, None]

        def bw(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx, g, axis=1)
            return (gx,)

        return _make(np.take_along_axis(x.data, idx, axis=1), (x,), bw, "channel_max")
    raise ValueError(f"unknown pooling mode {mode!r}")


# ---------------------------------------------------------------- structure


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise DimensionError("concat_channels needs at least one tensor")
    for t in xs:
        _check4(t, "concat_channels")
    n, _, h, w = xs[0].shape
    for t in xs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise DimensionError(
                f"concat_channels: N/H/W mismatch {xs[0].shape} vs {t.shape}"
            )
    if len(xs) == 1:
        return xs[0]
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def bw(g):
        return tuple(
            g[:, bounds[i]:bounds[i + 1]] if t.requires_grad else None
            for i, t in enumerate(xs)
        )

    return _make(np.concatenate([t.data for t in xs], axis=1), tuple(xs), bw, "concat")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _check4(x, "slice_channels")

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _make(x.data[:, start:stop].copy(), (x,), bw, "slice")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w.T + b`` for x (N, Cin), w (Cout, Cin), b (Cout,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def bw(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        gb = g.sum(axis=0) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw, "linear")


# ---------------------------------------------------------------- convolution


def _columns(xp: np.ndarray, k: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    """im2col matrix of shape (C*k*k, N*Ho*Wo) from a padded N×C×Hp×Wp input."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(c, k, k, n, ho, wo),
        strides=(sc, sh * dilation, sw * dilation, sn, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(c * k * k, n * ho * wo)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
           pad: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding."""
    _check4(x, "conv2d")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"conv2d: weight must be Cout×Cin×k×k, got {w.shape}")
    n, c, h, wd = x.shape
    cout, cin, k, _ = w.shape
    if c != cin:
        raise DimensionError(f"conv2d: input has {c} channels (axis 1) but weight expects {cin}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv2d: bias {b.shape} does not match {cout} output channels")
    if k < 1 or pad < 0 or dilation < 1 or stride < 1:
        raise DimensionError(f"conv2d: bad geometry k={k} pad={pad} dilation={dilation} stride={stride}")
    span = dilation * (k - 1) + 1
    if h + 2 * pad < span or wd + 2 * pad < span:
        raise DimensionError(
            f"conv2d: kernel span {span} exceeds padded input {h + 2 * pad}×{wd + 2 * pad} (axes 2, 3)"
        )
    ho = (h + 2 * pad - span) // stride + 1
    wo = (wd + 2 * pad - span) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _columns(xp, k, stride, dilation, ho, wo)
    w2 = w.data.reshape(cout, cin * k * k)
    out = w2 @ cols
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)

    def bw(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, n * ho * wo)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=1) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad and stride == 1 and pad <= span - 1:
            # input gradient as a correlation of g with the flipped, transposed kernel
            tpad = span - 1 - pad
            gp = np.pad(g, ((0, 0), (0, 0), (tpad, tpad), (tpad, tpad))) if tpad else g
            gcols = _columns(gp, k, 1, dilation, h, wd)
            wt = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, cout * k * k)
            gx = (wt @ gcols).reshape(cin, n, h, wd).transpose(1, 0, 2, 3)
        elif x.requires_grad:
            dcols = (w2.T @ g2).reshape(cin, k, k, n, ho, wo)
            gxp = np.zeros((cin, n, h + 2 * pad, wd + 2 * pad))
            for i in range(k):
                for j in range(k):
                    r0, c0 = i * dilation, j * dilation
                    gxp[:, :, r0:r0 + stride * (ho - 1) + 1:stride,
                        c0:c0 + stride * (wo - 1) + 1:stride] += dcols[:, i, j]
            gx = gxp[:, :, pad:pad + h, pad:pad + wd].transpose(1, 0, 2, 3)
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(np.ascontiguousarray(out), parents, bw, "conv2d")


def pool_output_size(size: int, k: int = 2, stride: int = 2) -> int:
    """Ceil-mode output extent; the last window always starts inside the input."""
    out = -(-(size - k) // stride) + 1
    if (out - 1) * stride >= size:
        out -= 1
    return out


def maxpool2d(x: Tensor, k: int = 2, stride: int = 2) -> Tensor:
    """Ceil-mode max pooling; ties resolve to the first element in row-major order."""
    _check4(x, "maxpool2d")
    n, c, h, w = x.shape
    if h < k or w < k:
        raise DimensionError(f"maxpool2d: window {k}×{k} larger than input {h}×{w} (axes 2, 3)")
    ho, wo = pool_output_size(h, k, stride), pool_output_size(w, k, stride)
    hp, wp = (ho - 1) * stride + k, (wo - 1) * stride + k
    xp = x.data
    if (hp, wp) != (h, w):
        xp = np.full((n, c, hp, wp), -np.inf)
        xp[:, :, :h, :w] = x.data
    sn, sc, sh, sw = xp.strides
    win = as_strided(xp, shape=(n, c, ho, wo, k, k),
                     strides=(sn, sc, sh * stride, sw * stride, sh, sw), writeable=False)
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[:, None] * stride + arg // k
    cols = np.arange(wo)[None, :] * stride + arg % k

    def bw(g):
        gx = np.zeros((n, c, hp, wp))
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        if k == stride:
            gx[ni, ci, rows, cols] = g
        else:
            np.add.at(gx, (ni, ci, rows, cols), g)
        return (gx[:, :, :h, :w],)

    return _make(out, (x,), bw, "maxpool")


@functools.lru_cache(maxsize=256)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out × n_in) half-pixel-center linear interpolation."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    m.setflags(write=False)
    return m


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with half-pixel centers; also used for downscaling."""
    _check4(x, "upsample_bilinear")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"upsample_bilinear: output size {out_h}×{out_w} must be positive")
    _, _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x
    ry, rx = _interp_matrix(h, out_h), _interp_matrix(w, out_w)
    out = ry @ x.data @ rx.T

    def bw(g):
        return (ry.T @ g @ rx,)

    return _make(out, (x,), bw, "upsample")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over (N, H, W).

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, as is conventional).
    """
    _check4(x, "batch_norm")
    c = x.shape[1]
    shape = (1, c, 1, 1)
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        m = x.data.size // c
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def bw(g):
        gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(shape)
            if training:
                mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
                mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                gx = (gxhat - mean_g - xhat * mean_gx) * inv.reshape(shape)
            else:
                gx = gxhat * inv.reshape(shape)
        return gx, gg, gb

    return _make(out, (x, gamma, beta), bw, "batch_norm")


# ---------------------------------------------------------------- verification


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
                      n_coords: int = 64, seed: int = 0) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``f`` maps ``x`` to a scalar tensor. At most ``n_coords`` coordinates are
    sampled (all of them if ``x`` is smaller). The error of each coordinate is
    ``|a - n| / max(|a|, |n|, floor)`` with ``floor = 1e-3 * max|n|`` over the
    sample, so coordinates whose gradient is negligible relative to the rest are
    compared on the gradient's overall scale rather than their own.
    """
    if not x.requires_grad:
        raise UsageError("finite_diff_check needs x.requires_grad")
    x.zero_grad()
    out = f(x)
    backward(out)
    analytic = x.grad.reshape(-1).copy()
    x.zero_grad()

    rng = np.random.default_rng(seed)
    total = x.data.size
    coords = np.arange(total) if total <= n_coords else rng.choice(total, n_coords, replace=False)
    flat = x.data.reshape(-1)
    numeric = np.empty(len(coords))
    with no_grad():
        for i, idx in enumerate(coords):
            orig = flat[idx]
            flat[idx] = orig + eps
            fp = f(x).item()
            flat[idx] = orig - eps
            fm = f(x).item()
            flat[idx] = orig
            numeric[i] = (fp - fm) / (2 * eps)
    a = analytic[coords]
    floor = max(1e-3 * np.abs(numeric).max(initial=0.0), 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
    return float(np.max(np.abs(a - numeric) / denom))
