"""Dense NCHW tensors with reverse-mode differentiation.

The op set is deliberately small: exactly what a pre-upsampling SR network,
a patch discriminator, and flow-weighted / warp-consistency losses need.
Forward values are float32; recording happens only while a Tape is active,
so inference over a frozen model builds no graph and allocates no grads.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "backward",
    "conv2d",
    "leaky_relu",
    "softplus",
    "bilinear_warp",
    "spatial_mean",
]


_tls = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_tls, "tape", None)


class Tensor:
    """A 4-D (n, c, h, w) float32 array, immutable once produced by an op.

    Scalars (results of reductions) are rank-0 tensors. ``grad`` is lazily
    allocated during backward for intermediates; Parameters allocate it
    eagerly so a zero gradient is observable even when nothing flowed.
    """

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same values cut off from any recording."""
        return Tensor(self.data)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad += grad

    # -- elementwise arithmetic (same-shape tensors, or a python scalar) --

    def _binary(self, other, forward, bwd_self, bwd_other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.shape != self.shape:
                raise ValueError(
                    f"elementwise op needs matching shapes, got {self.shape} vs {other.shape}"
                )
            out = _make(forward(self.data, other.data), (self, other))
            _record(out, (self, other), lambda g: (bwd_self(g), bwd_other(g)))
            return out
        if isinstance(other, (int, float)):
            c = self.data.dtype.type(other)
            out = _make(forward(self.data, c), (self,))
            _record(out, (self,), lambda g: (bwd_self(g),))
            return out
        return NotImplemented

    def __add__(self, other):
        return self._binary(other, np.add, lambda g: g, lambda g: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract, lambda g: g, lambda g: -g)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return self._binary(
                other, np.multiply, lambda g: g * other.data, lambda g: g * self.data
            )
        if isinstance(other, (int, float)):
            c = self.data.dtype.type(other)
            return self._binary(other, np.multiply, lambda g: g * c, None)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    # -- reductions --

    def sum(self) -> "Tensor":
        out = _make(self.data.sum(), (self,))
        _record(out, (self,), lambda g: (np.broadcast_to(g, self.shape),))
        return out

    def mean(self) -> "Tensor":
        n = self.data.size
        out = _make(self.data.mean(), (self,))
        _record(out, (self,), lambda g: (np.broadcast_to(g / n, self.shape),))
        return out

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Parameter(Tensor):
    """A named, optionally trainable leaf. Non-trainable parameters keep an
    all-zero gradient through any number of backward passes."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


class Tape:
    """Ordered record of executed ops for one reverse pass.

    Usable as a context manager; ops executed inside record themselves in
    execution order. A tape drives exactly one backward pass.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        self._prev = _active_tape()
        _tls.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _tls.tape = self._prev
        del self._prev


def _make(data: np.ndarray, inputs: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
    return out


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> None:
    """Attach a backward closure to the active tape.

    ``backward_fn(grad_out)`` returns one gradient per input (None allowed);
    accumulation respects each input's requires_grad.
    """
    if out._tape is None:
        return

    def apply(grad_out: np.ndarray) -> None:
        grads = backward_fn(grad_out)
        for t, g in zip(inputs, grads):
            if g is not None and t.requires_grad:
                t._accumulate(g)

    out._tape._records.append((out, inputs, apply))


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate d(loss)/d(x) into every requires-grad tensor under ``tape``.

    Gradients from multiple uses of one tensor accumulate by summation.
    The tape is consumed: a second backward on it is rejected.
    """
    if tape.consumed:
        raise RuntimeError("tape already consumed by a previous backward pass")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    if loss._tape is not tape:
        raise ValueError("loss was not produced under this tape")
    tape.consumed = True
    loss._accumulate(np.ones_like(loss.data))
    # Reverse execution order is a reverse topological order of the graph.
    for out, _inputs, apply in reversed(tape._records):
        if out.grad is not None:
            apply(out.grad)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

# Test hook: selftest fault injection multiplies conv's input gradient.
_conv_backward_fault = 1.0


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _col2im(cols: np.ndarray, xshape, kh: int, kw: int, stride: int, pad: int, oh: int, ow: int):
    n, c, h, w = xshape
    buf = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    if pad:
        return buf[:, :, pad : pad + h, pad : pad + w]
    return buf


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, zero_pad: int = 0) -> Tensor:
    """Direct 2-D convolution (cross-correlation) over NCHW input.

    weight: (out_c, in_c, kh, kw) with odd kh, kw; bias: (out_c,).
    Output spatial size is floor((h + 2*pad - k) / stride) + 1 per axis.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d input must be 4-D (n, c, h, w), got {x.shape}")
    oc, ic, kh, kw = weight.shape
    if x.shape[1] != ic:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, weight expects {ic}"
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel dims must be odd, got ({kh}, {kw})")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if bias.shape != (oc,):
        raise ValueError(f"conv2d bias must have shape ({oc},), got {bias.shape}")

    n = x.shape[0]
    cols, oh, ow = _im2col(x.data, kh, kw, stride, zero_pad)
    wm = weight.data.reshape(oc, ic * kh * kw)
    out_data = (wm @ cols).reshape(n, oc, oh, ow) + bias.data.reshape(1, oc, 1, 1)
    out = _make(out_data, (x, weight, bias))

    def bwd(g: np.ndarray):
        gm = g.reshape(n, oc, oh * ow)
        # cols are recomputed: cheaper than retaining them across the graph
        cols_b, _, _ = _im2col(x.data, kh, kw, stride, zero_pad)
        grad_w = np.einsum("nop,nkp->ok", gm, cols_b).reshape(weight.shape)
        grad_b = g.sum(axis=(0, 2, 3))
        grad_cols = np.einsum("ok,nop->nkp", wm, gm)
        grad_x = _col2im(grad_cols, x.shape, kh, kw, stride, zero_pad, oh, ow)
        if _conv_backward_fault != 1.0:
            grad_x = grad_x * _conv_backward_fault
        return grad_x, grad_w, grad_b

    _record(out, (x, weight, bias), bwd)
    return out


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """x if x >= 0 else slope * x, elementwise. Requires 0 <= slope <= 1."""
    if not 0.0 <= slope <= 1.0:
        raise ValueError(f"leaky_relu slope must be in [0, 1], got {slope}")
    mask = x.data >= 0
    out = _make(np.where(mask, x.data, x.data * x.data.dtype.type(slope)), (x,))
    _record(out, (x,), lambda g: (np.where(mask, g, g * g.dtype.type(slope)),))
    return out


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) in the overflow-safe max(x, 0) + log1p(exp(-|x|)) form.

    Building block of the logistic adversarial losses: -log sigmoid(x)
    equals softplus(-x).
    """
    d = x.data
    out_data = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))
    out = _make(out_data, (x,))
    # d softplus / dx = sigmoid(x), evaluated stably
    _record(out, (x,), lambda g: (g / (1.0 + np.exp(-d)),))
    return out


# ---------------------------------------------------------------------------
# bilinear warping
# ---------------------------------------------------------------------------


def _flow_uv(flow, n: int, h: int, w: int):
    """Stack one FlowField (broadcast over batch) or a sequence of them."""
    if hasattr(flow, "u") and hasattr(flow, "v"):
        fields = [flow] * n
    else:
        fields = list(flow)
        if len(fields) != n:
            raise ValueError(f"need 1 or {n} flow fields, got {len(fields)}")
    u = np.stack([np.asarray(f.u, dtype=np.float64) for f in fields])
    v = np.stack([np.asarray(f.v, dtype=np.float64) for f in fields])
    if u.shape != (n, h, w):
        raise ValueError(
            f"flow spatial size {u.shape[1:]} does not match source ({h}, {w})"
        )
    return u, v


def _warp_coords(u: np.ndarray, v: np.ndarray, h: int, w: int):
    n = u.shape[0]
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sx = np.clip(xs[None] + u, 0.0, w - 1.0)
    sy = np.clip(ys[None] + v, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    # fractional weights stay float64; the gather casts back to source dtype
    fx = sx - x0
    fy = sy - y0
    return (x0, x1, y0, y1, fx, fy)


def _bilinear_gather(src: np.ndarray, coords) -> np.ndarray:
    """Sample src (n, c, h, w) at precomputed corner indices/weights."""
    x0, x1, y0, y1, fx, fy = coords
    b = np.arange(src.shape[0])[:, None, None]
    p00 = src[b, :, y0, x0]  # (n, h, w, c)
    p01 = src[b, :, y0, x1]
    p10 = src[b, :, y1, x0]
    p11 = src[b, :, y1, x1]
    fx = fx[..., None]
    fy = fy[..., None]
    top = p00 * (1.0 - fx) + p01 * fx
    bot = p10 * (1.0 - fx) + p11 * fx
    out = top * (1.0 - fy) + bot * fy
    return np.moveaxis(out, -1, 1)


def bilinear_warp(source: Tensor, flow) -> Tensor:
    """Backward-warp: out(p) = bilinear sample of source at p + flow(p).

    Sample coordinates use pixel-center alignment and clamp to the border
    when they leave the frame. ``flow`` is a FlowField (applied to every
    batch item) or a sequence of one FlowField per item; it is held fixed,
    so the gradient flows to ``source`` only.
    """
    if source.data.ndim != 4:
        raise ValueError(f"bilinear_warp source must be 4-D, got {source.shape}")
    n, c, h, w = source.shape
    u, v = _flow_uv(flow, n, h, w)
    if np.all(u == 0.0) and np.all(v == 0.0):
        # identity warp is bit-identical to its source
        out = _make(source.data.copy(), (source,))
        _record(out, (source,), lambda g: (g,))
        return out
    coords = _warp_coords(u, v, h, w)
    out = _make(_bilinear_gather(source.data, coords).astype(source.data.dtype), (source,))

    def bwd(g: np.ndarray):
        x0, x1, y0, y1, fx, fy = coords
        # channels-last scatter buffer, float64 while weights multiply in
        buf = np.zeros((n, h, w, c), dtype=np.result_type(fx.dtype, g.dtype))
        gm = np.moveaxis(g, 1, -1)
        b = np.arange(n)[:, None, None]
        fx_ = fx[..., None]
        fy_ = fy[..., None]
        np.add.at(buf, (b, y0, x0), (1 - fx_) * (1 - fy_) * gm)
        np.add.at(buf, (b, y0, x1), fx_ * (1 - fy_) * gm)
        np.add.at(buf, (b, y1, x0), (1 - fx_) * fy_ * gm)
        np.add.at(buf, (b, y1, x1), fx_ * fy_ * gm)
        return (np.moveaxis(buf, -1, 1).astype(g.dtype, copy=False),)

    _record(out, (source,), bwd)
    return out


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def spatial_mean(x: Tensor) -> Tensor:
    """Mean over the spatial axes: (n, c, h, w) -> (n, c, 1, 1).

    Lets a strided discriminator stack end in one logit per image whatever
    the input size.
    """
    if x.data.ndim != 4:
        raise ValueError(f"spatial_mean input must be 4-D, got {x.shape}")
    n, c, h, w = x.shape
    out = _make(x.data.mean(axis=(2, 3), keepdims=True), (x,))
    _record(out, (x,), lambda g: (np.broadcast_to(g / (h * w), x.shape),))
    return out
