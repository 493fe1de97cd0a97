"""Tensor type and differentiable operations.

A ``Tensor`` wraps a numpy array together with an optional gradient and the
closure that propagates incoming gradients to its parents. Calling
:func:`backward` on a scalar loss walks the graph once in reverse
topological order and accumulates ``grad`` on every tensor that requires it.

Convolutions use symmetric zero padding so that an input with T frames and
stride s produces ceil(T / s) output frames. They are evaluated as a single
matrix product over an im2col patch matrix; the backward pass scatters the
patch gradients back with one strided accumulation per kernel offset.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from bcenhance.errors import ConfigError, DimensionError

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A numpy array plus reverse-mode bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_propagate")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._propagate = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same data with no graph history."""
        return Tensor(self.data, requires_grad=False)

    def accumulate(self, delta: np.ndarray, fresh: bool = False) -> None:
        """Add ``delta`` into ``grad``.

        ``fresh=True`` promises the caller holds no other reference to
        ``delta``, letting a first touch adopt the array instead of copying.
        """
        if self.grad is None:
            if fresh and delta.dtype == self.data.dtype and delta.flags.owndata:
                self.grad = delta
            else:
                self.grad = np.array(delta, dtype=self.data.dtype, copy=True)
        else:
            self.grad += delta

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self, axis: int | None = None) -> "Tensor":
        return mean(self, axis)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents: tuple[Tensor, ...], propagate) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._propagate = propagate
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor the scalar ``loss`` depends on."""
    if loss.data.ndim != 0:
        raise DimensionError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    loss.accumulate(np.ones((), dtype=loss.data.dtype))
    for node in reversed(order):
        if node._propagate is not None:
            node._propagate(node.grad)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data + b.data

    def propagate(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _result(data, (a, b), propagate)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data - b.data

    def propagate(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(-_unbroadcast(g, b.data.shape))

    return _result(data, (a, b), propagate)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data * b.data

    def propagate(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), propagate)


def neg(a: Tensor) -> Tensor:
    def propagate(g):
        a.accumulate(-g)

    return _result(-a.data, (a,), propagate)


def absolute(a: Tensor) -> Tensor:
    data = np.abs(a.data)

    def propagate(g):
        a.accumulate(g * np.sign(a.data))

    return _result(data, (a,), propagate)


def square(a: Tensor) -> Tensor:
    def propagate(g):
        a.accumulate(g * (2.0 * a.data))

    return _result(a.data * a.data, (a,), propagate)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def propagate(g):
        a.accumulate(g / a.data)

    return _result(data, (a,), propagate)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp for large |x|.
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def propagate(g):
        a.accumulate(g * out * (1.0 - out))

    return _result(out, (a,), propagate)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def propagate(g):
        a.accumulate(g * (a.data > 0.0))

    return _result(data, (a,), propagate)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    data = np.maximum(a.data, floor)

    def propagate(g):
        a.accumulate(g * (a.data > floor))

    return _result(data, (a,), propagate)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = a.data.size
        data = a.data.mean()

        def propagate(g):
            a.accumulate(np.broadcast_to(g / n, a.data.shape))

    else:
        n = a.data.shape[axis]
        data = a.data.mean(axis=axis)

        def propagate(g):
            a.accumulate(np.broadcast_to(np.expand_dims(g / n, axis), a.data.shape))

    return _result(data, (a,), propagate)


def tensor_sum(a: Tensor) -> Tensor:
    data = a.data.sum()

    def propagate(g):
        a.accumulate(np.broadcast_to(g, a.data.shape))

    return _result(data, (a,), propagate)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def propagate(g):
        a.accumulate(g.reshape(a.data.shape))

    return _result(data, (a,), propagate)


def dot(x: Tensor, w: Tensor) -> Tensor:
    """Inner product of two 1-D tensors."""
    if x.data.ndim != 1 or w.data.ndim != 1 or x.data.shape != w.data.shape:
        raise DimensionError(f"dot expects equal 1-D shapes, got {x.data.shape} and {w.data.shape}")
    data = x.data @ w.data

    def propagate(g):
        if x.requires_grad:
            x.accumulate(g * w.data, fresh=True)
        if w.requires_grad:
            w.accumulate(g * x.data, fresh=True)

    return _result(data, (x, w), propagate)


def glu(linear: Tensor, gate: Tensor) -> Tensor:
    """Gated linear unit: ``linear * sigmoid(gate)`` with both paths pre-activated."""
    if linear.data.shape != gate.data.shape:
        raise DimensionError(
            f"glu paths must match, got linear {linear.data.shape} vs gate {gate.data.shape}"
        )
    return mul(linear, sigmoid(gate))


def same_pad_amount(length: int, kernel: int, stride: int) -> tuple[int, int]:
    """Left/right zero padding so the output has ceil(length / stride) steps."""
    out_len = -(-length // stride)
    total = max((out_len - 1) * stride + kernel - length, 0)
    left = total // 2
    return left, total - left


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Strided 1-D convolution with symmetric same-padding.

    Parameters
    ----------
    x : Tensor
        Input of shape [in_channels, T].
    weight : Tensor
        Kernel of shape [out_channels, in_channels, k].
    bias : Tensor or None
        Per-output-channel offset of shape [out_channels].
    stride : int
        Step between output frames; output has ceil(T / stride) frames.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"conv1d input must be [channels, frames], got shape {x.data.shape}")
    if weight.data.ndim != 3:
        raise DimensionError(f"conv1d weight must be [out, in, k], got shape {weight.data.shape}")
    cin, t = x.data.shape
    cout, win, k = weight.data.shape
    if win != cin:
        raise DimensionError(f"conv1d input has {cin} channels but weight expects {win}")
    if stride < 1:
        raise ConfigError(f"conv1d stride must be positive, got {stride}")

    left, right = same_pad_amount(t, k, stride)
    t_out = -(-t // stride)
    xp = np.pad(x.data, ((0, 0), (left, right)))
    # cols: [cin, t_out, k] -> [cin * k, t_out]
    cols = sliding_window_view(xp, k, axis=1)[:, ::stride][:, :t_out]
    cols2 = np.ascontiguousarray(cols.transpose(0, 2, 1)).reshape(cin * k, t_out)
    w2 = weight.data.reshape(cout, cin * k)
    out = w2 @ cols2
    if bias is not None:
        out = out + bias.data[:, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def propagate(g):
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            np.matmul(g, cols2.T, out=gw.reshape(cout, cin * k))
            weight.accumulate(gw, fresh=True)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=1), fresh=True)
        if x.requires_grad:
            gcols = (w2.T @ g).reshape(cin, k, t_out)
            gxp = np.zeros_like(xp)
            span = (t_out - 1) * stride + 1
            for i in range(k):
                gxp[:, i : i + span : stride] += gcols[:, i, :]
            gx = gxp if left == right == 0 else np.ascontiguousarray(gxp[:, left : left + t])
            x.accumulate(gx, fresh=True)

    return _result(out, parents, propagate)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: tuple[int, int] = (1, 1),
) -> Tensor:
    """Strided 2-D convolution with symmetric same-padding on both axes.

    Parameters
    ----------
    x : Tensor
        Input of shape [in_channels, H, W].
    weight : Tensor
        Kernel of shape [out_channels, in_channels, kh, kw].
    bias : Tensor or None
        Per-output-channel offset of shape [out_channels].
    stride : (int, int)
        Steps along H and W; output is [out, ceil(H/sh), ceil(W/sw)].
    """
    if x.data.ndim != 3:
        raise DimensionError(f"conv2d input must be [channels, H, W], got shape {x.data.shape}")
    if weight.data.ndim != 4:
        raise DimensionError(f"conv2d weight must be [out, in, kh, kw], got shape {weight.data.shape}")
    cin, h, w = x.data.shape
    cout, win, kh, kw = weight.data.shape
    if win != cin:
        raise DimensionError(f"conv2d input has {cin} channels but weight expects {win}")
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ConfigError(f"conv2d strides must be positive, got {stride}")

    top, bottom = same_pad_amount(h, kh, sh)
    left, right = same_pad_amount(w, kw, sw)
    h_out = -(-h // sh)
    w_out = -(-w // sw)
    xp = np.pad(x.data, ((0, 0), (top, bottom), (left, right)))
    # windows: [cin, h_out, w_out, kh, kw]
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw][:, :h_out, :w_out]
    cols = np.ascontiguousarray(windows.transpose(0, 3, 4, 1, 2)).reshape(cin * kh * kw, h_out * w_out)
    w2 = weight.data.reshape(cout, cin * kh * kw)
    out = (w2 @ cols).reshape(cout, h_out, w_out)
    if bias is not None:
        out = out + bias.data[:, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def propagate(g):
        gflat = g.reshape(cout, h_out * w_out)
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            np.matmul(gflat, cols.T, out=gw.reshape(cout, cin * kh * kw))
            weight.accumulate(gw, fresh=True)
        if bias is not None and bias.requires_grad:
            bias.accumulate(gflat.sum(axis=1), fresh=True)
        if x.requires_grad:
            gcols = (w2.T @ gflat).reshape(cin, kh, kw, h_out, w_out)
            gxp = np.zeros_like(xp)
            hspan = (h_out - 1) * sh + 1
            wspan = (w_out - 1) * sw + 1
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + hspan : sh, j : j + wspan : sw] += gcols[:, i, j, :, :]
            gx = gxp if top == bottom == left == right == 0 else np.ascontiguousarray(
                gxp[:, top : top + h, left : left + w]
            )
            x.accumulate(gx, fresh=True)

    return _result(out, parents, propagate)


def instance_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each channel of a single sample to zero mean, unit variance.

    Works on [C, T] or [C, H, W]; statistics are taken over all non-channel
    axes. ``scale`` and ``shift`` are per-channel vectors of length C.
    """
    if x.data.ndim < 2:
        raise DimensionError(f"instance_norm input must have a channel axis plus data axes, got {x.data.shape}")
    c = x.data.shape[0]
    if scale.data.shape != (c,) or shift.data.shape != (c,):
        raise DimensionError(
            f"instance_norm scale/shift must be length-{c} vectors, got {scale.data.shape} and {shift.data.shape}"
        )
    axes = tuple(range(1, x.data.ndim))
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    bshape = (c,) + (1,) * (x.data.ndim - 1)
    out = scale.data.reshape(bshape) * xhat + shift.data.reshape(bshape)

    def propagate(g):
        if shift.requires_grad:
            shift.accumulate(g.sum(axis=axes), fresh=True)
        if scale.requires_grad:
            scale.accumulate((g * xhat).sum(axis=axes), fresh=True)
        if x.requires_grad:
            gx_hat = g * scale.data.reshape(bshape)
            m1 = gx_hat.mean(axis=axes, keepdims=True)
            m2 = (gx_hat * xhat).mean(axis=axes, keepdims=True)
            x.accumulate(inv * (gx_hat - m1 - xhat * m2), fresh=True)

    return _result(out, (x, scale, shift), propagate)


def shuffle1d(x: Tensor, factor: int) -> Tensor:
    """Sub-pixel shuffle: trade channels for time resolution.

    A [C, T] input becomes [C / factor, factor * T]; output frame
    ``factor * t + i`` of channel ``c`` is input frame ``t`` of channel
    ``c * factor + i``, so adjacent output frames interleave channel groups.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"shuffle1d input must be [channels, frames], got shape {x.data.shape}")
    c, t = x.data.shape
    if factor < 1:
        raise ConfigError(f"shuffle factor must be positive, got {factor}")
    if c % factor != 0:
        raise DimensionError(f"shuffle1d needs channels divisible by factor, got {c} % {factor} != 0")
    data = x.data.reshape(c // factor, factor, t).transpose(0, 2, 1).reshape(c // factor, factor * t)

    def propagate(g):
        x.accumulate(g.reshape(c // factor, t, factor).transpose(0, 2, 1).reshape(c, t))

    return _result(data, (x,), propagate)
