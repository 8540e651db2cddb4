"""Minimal reverse-mode differentiation over dense float64 tensors.

Complex tensors are stored as real arrays with a trailing axis of size 2
holding (real, imag).  Their gradients use the same layout: the gradient
entry for a complex element z is dL/dRe(z) + i dL/dIm(z), which is the
convention under which ``conj(W) @ G`` is the adjoint of ``W @ z``.

Every op records a closure that scatters the output gradient into its
parents.  ``Value.backward`` walks the graph once in reverse topological
order and then drops the closures so the graph can be collected.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Build values without recording the graph (inference / momentum branch)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _as_complex(data: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(data).view(np.complex128)[..., 0]


def _as_pairs(z: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(z, dtype=np.complex128)[..., None].view(np.float64)


class Value:
    """A tensor node in the computation graph."""

    __slots__ = ("data", "_grad", "op", "parents", "_backward", "is_complex", "requires_grad")

    def __init__(self, data, *, is_complex: bool = False, requires_grad: bool = False,
                 parents: tuple = (), op: str = "", backward: Callable | None = None):
        data = np.asarray(data, dtype=np.float64)
        if is_complex and (data.ndim == 0 or data.shape[-1] != 2):
            raise ShapeError(f"complex value needs a trailing (re, im) axis, got shape {data.shape}")
        self.data = data
        self._grad = None
        self.op = op
        self.parents = parents
        self._backward = backward
        self.is_complex = is_complex
        self.requires_grad = requires_grad

    @classmethod
    def from_complex(cls, z, requires_grad: bool = False) -> "Value":
        return cls(_as_pairs(np.asarray(z, dtype=np.complex128)), is_complex=True,
                   requires_grad=requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape[:-1] if self.is_complex else self.data.shape

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = None if value is None else np.asarray(value, dtype=np.float64)

    def zero_grad(self) -> None:
        self._grad = None

    def complex(self) -> np.ndarray:
        if not self.is_complex:
            raise ShapeError("value is real")
        return _as_complex(self.data)

    def numpy(self) -> np.ndarray:
        return self.complex() if self.is_complex else self.data

    def _accumulate(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self._grad += g

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} != {self.data.shape}")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node._grad is not None:
                node._backward(node._grad)
        for node in order:
            if node.parents:
                node.parents = ()
                node._backward = None

    def __repr__(self):
        kind = "complex" if self.is_complex else "real"
        return f"Value({kind}, shape={self.shape}, op={self.op!r})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return NotImplemented

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _result(data, parents: Sequence[Value], op: str, backward, is_complex: bool = False) -> Value:
    tracked = tuple(p for p in parents if p.requires_grad)
    if _grad_enabled and tracked:
        return Value(data, is_complex=is_complex, requires_grad=True,
                     parents=tuple(parents), op=op, backward=backward)
    return Value(data, is_complex=is_complex, op=op)


def _norm_axis(v: Value, axis: int) -> int:
    nd = v.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"axis {axis} out of range for shape {v.shape}")
    return axis % nd


def _require_real(*vs: Value) -> None:
    for v in vs:
        if v.is_complex:
            raise ShapeError(f"op needs real input, got complex {v.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Value:
    """Elementwise sum; ``b`` may also be a bias vector over the last axis."""
    a, b = _lift(a), _lift(b)
    if a.is_complex != b.is_complex:
        raise ShapeError("cannot add real and complex values")
    if a.shape == b.shape:
        bias = False
    elif not a.is_complex and b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        bias = True
    else:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not agree")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.reshape(-1, b.shape[0]).sum(axis=0) if bias else g)

    return _result(a.data + b.data, (a, b), "add", backward, a.is_complex)


def neg(a: Value) -> Value:
    return scale(a, -1.0)


def scale(a: Value, c: float) -> Value:
    a = _lift(a)

    def backward(g):
        a._accumulate(c * g)

    return _result(c * a.data, (a,), "scale", backward, a.is_complex)


def mul(a, b) -> Value:
    a, b = _lift(a), _lift(b)
    _require_real(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not agree")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _result(a.data * b.data, (a, b), "mul", backward)


def exp(a: Value) -> Value:
    _require_real(a)
    out = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out)

    return _result(out, (a,), "exp", backward)


def log(a: Value) -> Value:
    _require_real(a)

    def backward(g):
        a._accumulate(g / a.data)

    return _result(np.log(a.data), (a,), "log", backward)


def detach(a: Value) -> Value:
    return Value(a.data.copy(), is_complex=a.is_complex, op="detach")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Value, shape: Sequence[int]) -> Value:
    _require_real(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _result(out, (a,), "reshape", backward)


def select(a: Value, index: int, axis: int) -> Value:
    """Pick one position along ``axis`` and drop that axis."""
    ax = _norm_axis(a, axis)
    n = a.shape[ax]
    if not -n <= index < n:
        raise ShapeError(f"index {index} out of range for axis of size {n}")
    index %= n
    out = np.take(a.data, index, axis=ax)

    def backward(g):
        full = np.zeros_like(a.data)
        sl = [slice(None)] * a.data.ndim
        sl[ax] = index
        full[tuple(sl)] = g
        a._accumulate(full)

    return _result(out, (a,), "select", backward, a.is_complex)


def slice_axis(a: Value, start: int, stop: int | None, axis: int) -> Value:
    ax = _norm_axis(a, axis)
    sl = [slice(None)] * a.data.ndim
    sl[ax] = slice(start, stop)
    sl = tuple(sl)
    out = a.data[sl]

    def backward(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        a._accumulate(full)

    return _result(out, (a,), "slice", backward, a.is_complex)


def concat(xs: Sequence[Value], axis: int) -> Value:
    xs = [_lift(x) for x in xs]
    if not xs:
        raise ShapeError("concat of nothing")
    is_complex = xs[0].is_complex
    ax = _norm_axis(xs[0], axis)
    for x in xs[1:]:
        if x.is_complex != is_complex or x.ndim != xs[0].ndim:
            raise ShapeError("concat: incompatible inputs")
        other = [s for i, s in enumerate(x.shape) if i != ax]
        if other != [s for i, s in enumerate(xs[0].shape) if i != ax]:
            raise ShapeError(f"concat: shapes {xs[0].shape} and {x.shape} disagree off-axis")
    sizes = [x.shape[ax] for x in xs]
    out = np.concatenate([x.data for x in xs], axis=ax)

    def backward(g):
        parts = np.split(g, np.cumsum(sizes)[:-1], axis=ax)
        for x, part in zip(xs, parts):
            if x.requires_grad:
                x._accumulate(part)

    return _result(out, tuple(xs), "concat", backward, is_complex)


# ---------------------------------------------------------------------------
# reductions


def sum_over(a: Value, axis: int | None = None) -> Value:
    _require_real(a)
    if axis is None:
        out = np.asarray(a.data.sum())

        def backward(g):
            a._accumulate(np.broadcast_to(g, a.data.shape))
    else:
        ax = _norm_axis(a, axis)
        out = a.data.sum(axis=ax)

        def backward(g):
            a._accumulate(np.broadcast_to(np.expand_dims(g, ax), a.data.shape))

    return _result(out, (a,), "sum", backward)


def mean_over(a: Value, axis: int) -> Value:
    ax = _norm_axis(a, axis)
    n = a.shape[ax]
    out = a.data.mean(axis=ax)

    def backward(g):
        a._accumulate(np.broadcast_to(np.expand_dims(g, ax), a.data.shape) / n)

    return _result(out, (a,), "mean", backward, a.is_complex)


def logsumexp(a: Value, axis: int) -> Value:
    _require_real(a)
    ax = _norm_axis(a, axis)
    m = a.data.max(axis=ax, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=ax, keepdims=True)
    out = (m + np.log(s)).squeeze(ax)
    soft = e / s

    def backward(g):
        a._accumulate(np.expand_dims(g, ax) * soft)

    return _result(out, (a,), "logsumexp", backward)


def l2_normalize(a: Value, axis: int = -1, eps: float = 1e-12) -> Value:
    """x / max(||x||, eps) along ``axis``."""
    _require_real(a)
    ax = _norm_axis(a, axis)
    norm = np.sqrt((a.data ** 2).sum(axis=ax, keepdims=True))
    denom = np.maximum(norm, eps)
    y = a.data / denom
    live = norm > eps

    def backward(g):
        proj = (g * y).sum(axis=ax, keepdims=True)
        a._accumulate(np.where(live, (g - y * proj) / denom, g / denom))

    return _result(y, (a,), "l2_normalize", backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Value:
    a, b = _lift(a), _lift(b)
    _require_real(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not agree")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), "matmul", backward)


def linear(x, W: Value, b: Value | None = None) -> Value:
    """Per-position affine map ``x @ W + b`` over the last axis of ``x``."""
    x = _lift(x)
    _require_real(x, W)
    if W.ndim != 2 or x.ndim < 1 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input {x.shape} vs weight {W.shape}")
    if b is not None and (b.ndim != 1 or b.shape[0] != W.shape[1]):
        raise ShapeError(f"linear: bias {b.shape} vs weight {W.shape}")
    d_in, d_out = W.shape
    out = x.data @ W.data
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g):
        g2 = g.reshape(-1, d_out)
        if x.requires_grad:
            x._accumulate(g @ W.data.T)
        if W.requires_grad:
            W._accumulate(x.data.reshape(-1, d_in).T @ g2)
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))

    return _result(out, parents, "linear", backward)


def conv1d_causal(x, kernel: Value, last_only: bool = False) -> Value:
    """Causal 1-D convolution over the time axis.

    x: [B, L, D], kernel: [k, D, D_out] -> [B, L, D_out].  The input is
    left-padded with k-1 zeros and tap ``j`` multiplies ``x[t - (k-1) + j]``,
    so output t only sees inputs at times <= t.  With ``last_only`` only the
    final timestep is produced, as [B, D_out].
    """
    x = _lift(x)
    _require_real(x, kernel)
    if x.ndim != 3 or kernel.ndim != 3 or kernel.shape[1] != x.shape[2]:
        raise ShapeError(f"conv1d_causal: input {x.shape} vs kernel {kernel.shape}")
    k, d_in, d_out = kernel.shape
    if k < 1:
        raise ShapeError("kernel size must be >= 1")
    B, L, _ = x.shape
    K2 = kernel.data.reshape(k * d_in, d_out)

    if last_only:
        m = min(k, L)
        tail = x.data[:, L - m:, :]
        cols = np.zeros((B, k, d_in))
        cols[:, k - m:, :] = tail
        cols = cols.reshape(B, k * d_in)
        out = cols @ K2

        def backward(g):
            if kernel.requires_grad:
                kernel._accumulate((cols.T @ g).reshape(kernel.data.shape))
            if x.requires_grad:
                dcols = (g @ K2.T).reshape(B, k, d_in)
                full = np.zeros_like(x.data)
                full[:, L - m:, :] = dcols[:, k - m:, :]
                x._accumulate(full)

        return _result(out, (x, kernel), "conv1d_causal_last", backward)

    xpad = np.concatenate([np.zeros((B, k - 1, d_in)), x.data], axis=1)
    # [B, L, D, k] -> [B, L, k, D]
    cols = sliding_window_view(xpad, k, axis=1).transpose(0, 1, 3, 2).reshape(B * L, k * d_in)
    out = (cols @ K2).reshape(B, L, d_out)

    def backward(g):
        g2 = g.reshape(B * L, d_out)
        if kernel.requires_grad:
            kernel._accumulate((cols.T @ g2).reshape(kernel.data.shape))
        if x.requires_grad:
            dcols = (g2 @ K2.T).reshape(B, L, k, d_in)
            dpad = np.zeros_like(xpad)
            for j in range(k):
                dpad[:, j:j + L, :] += dcols[:, :, j, :]
            x._accumulate(dpad[:, k - 1:, :])

    return _result(out, (x, kernel), "conv1d_causal", backward)


def rfft(x) -> Value:
    """Real FFT over axis 1: [B, L, D] -> complex [B, L//2+1, D]."""
    x = _lift(x)
    _require_real(x)
    if x.ndim != 3:
        raise ShapeError(f"rfft expects [B, L, D], got {x.shape}")
    n = x.shape[1]
    z = np.fft.rfft(x.data, axis=1)

    def backward(g):
        # adjoint: Re(sum_f G_f exp(+2 pi i f t / n))
        G = _as_complex(g)
        full = np.zeros((G.shape[0], n, G.shape[2]), dtype=np.complex128)
        full[:, :G.shape[1], :] = G
        x._accumulate(np.real(np.fft.ifft(full, axis=1)) * n)

    return _result(_as_pairs(z), (x,), "rfft", backward, is_complex=True)


def irfft(z: Value, n: int) -> Value:
    """Inverse of :func:`rfft` for a signal of length ``n``."""
    if not z.is_complex or z.ndim != 3:
        raise ShapeError(f"irfft expects complex [B, F, D], got {z!r}")
    F = z.shape[1]
    if F != n // 2 + 1:
        raise ShapeError(f"irfft: {F} bins cannot invert a length-{n} signal")
    out = np.fft.irfft(z.complex(), n=n, axis=1)
    weight = np.full(F, 2.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0
    weight = (weight / n)[None, :, None]

    def backward(g):
        z._accumulate(_as_pairs(np.fft.rfft(g, axis=1) * weight))

    return _result(out, (z,), "irfft", backward)


def complex_linear(z: Value, W: Value) -> Value:
    """Independent complex matmul per frequency bin.

    z: complex [B, F, D_in], W: complex [F, D_in, D_out] -> complex [B, F, D_out].
    """
    if not (z.is_complex and W.is_complex):
        raise ShapeError("complex_linear needs complex input and weight")
    if z.ndim != 3 or W.ndim != 3 or z.shape[1] != W.shape[0] or z.shape[2] != W.shape[1]:
        raise ShapeError(f"complex_linear: input {z.shape} vs weight {W.shape}")
    zc = z.complex().transpose(1, 0, 2)  # [F, B, D_in]
    Wc = W.complex()
    out = np.matmul(zc, Wc).transpose(1, 0, 2)

    def backward(g):
        G = _as_complex(g).transpose(1, 0, 2)  # [F, B, D_out]
        if z.requires_grad:
            z._accumulate(_as_pairs(np.matmul(G, np.conj(Wc).transpose(0, 2, 1)).transpose(1, 0, 2)))
        if W.requires_grad:
            W._accumulate(_as_pairs(np.matmul(np.conj(zc).transpose(0, 2, 1), G)))

    return _result(_as_pairs(out), (z, W), "complex_linear", backward, is_complex=True)


def irfft_at(z: Value, n: int, t: int) -> Value:
    """Sample ``t`` of :func:`irfft`: complex [B, F, D] -> real [B, D].

    Equals ``select(irfft(z, n), t, axis=1)`` without synthesising the other
    n - 1 samples.
    """
    if not z.is_complex or z.ndim != 3:
        raise ShapeError(f"irfft_at expects complex [B, F, D], got {z!r}")
    F = z.shape[1]
    if F != n // 2 + 1:
        raise ShapeError(f"irfft_at: {F} bins cannot invert a length-{n} signal")
    if not -n <= t < n:
        raise ShapeError(f"time index {t} out of range for length {n}")
    t %= n
    weight = np.full(F, 2.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0
    coef = weight / n * np.exp(2j * np.pi * np.arange(F) * t / n)  # [F]
    out = np.einsum("bfd,f->bd", z.complex(), coef).real

    def backward(g):
        # d out / d Re z = Re(coef), d out / d Im z = -Im(coef)
        z._accumulate(_as_pairs(g[:, None, :] * np.conj(coef)[None, :, None]))

    return _result(out, (z,), "irfft_at", backward)


def real_complex_matmul(a: Value, W: Value) -> Value:
    """Real [D_in, D_mid] times complex [F, D_mid, D_out] -> complex [F, D_in, D_out]."""
    _require_real(a)
    if not W.is_complex or a.ndim != 2 or W.ndim != 3 or a.shape[1] != W.shape[1]:
        raise ShapeError(f"real_complex_matmul: {a.shape} vs {W.shape}")
    Wc = W.complex()
    out = np.matmul(a.data[None, :, :], Wc)

    def backward(g):
        G = _as_complex(g)
        if a.requires_grad:
            a._accumulate(np.einsum("fio,fmo->im", G, np.conj(Wc)).real)
        if W.requires_grad:
            W._accumulate(_as_pairs(np.matmul(a.data.T[None, :, :], G)))

    return _result(_as_pairs(out), (a, W), "real_complex_matmul", backward, is_complex=True)
