"""Dense NCHW tensors with reverse-mode differentiation.

Every forward operation returns a new :class:`Tensor`; when any input requires
a gradient, the output remembers its parents and a closure mapping the output
gradient to the input gradients.  :func:`backward` records the reachable graph
into a :class:`Tape` (topologically ordered) and walks it in reverse.

Convolution is cross-correlation with zero padding.  Saved activations stay
alive on the graph until it is dropped; nothing is recomputed.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ConfigurationError, ShapeError

_grad_enabled = True
_monitor: "KinkMonitor | None" = None


class Tensor:
    """A numpy array plus the bookkeeping needed to differentiate through it."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def sum(self):
        return tsum(self)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def abs(self):
        return tabs(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A trainable leaf tensor. ``grad`` always exists and starts at zero."""

    def __init__(self, data, name: str = "", requires_grad: bool = True, dtype=None):
        super().__init__(np.array(data, dtype=dtype), requires_grad=requires_grad)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _wrap(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording a graph (outputs are detached)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@dataclass
class KinkMonitor:
    """Smallest distance to a non-differentiable point seen during a forward pass."""

    min_gap: float = math.inf

    def note(self, values: np.ndarray) -> None:
        if values.size:
            self.min_gap = min(self.min_gap, float(np.min(np.abs(values))))


@contextlib.contextmanager
def kink_monitor() -> Iterator[KinkMonitor]:
    global _monitor
    prev, _monitor = _monitor, KinkMonitor()
    try:
        yield _monitor
    finally:
        _monitor = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# tape and backward


@dataclass
class Tape:
    """Topologically ordered record of the graph reachable from one output."""

    nodes: list[Tensor] = field(default_factory=list)
    outputs: list[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, out: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            t, finished = stack.pop()
            if finished:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(nodes=order, outputs=[out])

    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t._backward is None]


def backward(loss: Tensor, tape: Tape | None = None) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Gradients add onto whatever the leaves already hold; call ``zero_grad`` on
    the owning module between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires a gradient")
    if tape is None:
        tape = Tape.record(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(tape.nodes):
        g = pending.pop(id(t), None)
        if g is None:
            continue
        if t._backward is None:
            if t.grad is None:
                t.grad = g.copy()
            else:
                t.grad += g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    return tape


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a.dtype)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g * b.data, sa), _unbroadcast(g * a.data, sb)

    return _make(a.data * b.data, (a, b), bw, "mul")


def tabs(x: Tensor) -> Tensor:
    if _monitor is not None:
        _monitor.note(x.data)

    def bw(g):
        return (g * np.sign(x.data),)

    return _make(np.abs(x.data), (x,), bw, "abs")


def log(x: Tensor) -> Tensor:
    def bw(g):
        return (g / x.data,)

    return _make(np.log(x.data), (x,), bw, "log")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient passes only where the input was inside."""

    def bw(g):
        return (g * ((x.data >= lo) & (x.data <= hi)),)

    return _make(np.clip(x.data, lo, hi), (x,), bw, "clip")


def relu(x: Tensor) -> Tensor:
    if _monitor is not None:
        _monitor.note(x.data)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), bw, "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if _monitor is not None:
        _monitor.note(x.data)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)

    def bw(g):
        return (g * scale,)

    return _make(x.data * scale, (x,), bw, "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)

    def bw(g):
        return (g * out * (1 - out),)

    return _make(out, (x,), bw, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bw(g):
        return (g * (1 - out * out),)

    return _make(out, (x,), bw, "tanh")


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "leaky_relu": leaky_relu}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# reductions and reshapes


def tsum(x: Tensor) -> Tensor:
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

    return _make(np.asarray(x.data.sum()), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    out = x.data.mean(axis=axis, keepdims=keepdims)
    n = x.data.size // max(np.asarray(out).size, 1)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).astype(x.dtype, copy=True),)

    return _make(np.asarray(out), (x,), bw, "mean")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape

    def bw(g):
        return (g.reshape(old),)

    return _make(x.data.reshape(shape), (x,), bw, "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


# ---------------------------------------------------------------------------
# image operations


def _require_4d(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op} expects an NCHW tensor, got shape {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           padding: int | str = "same", stride: int = 1) -> Tensor:
    """Cross-correlate ``x`` (B,C,H,W) with ``weight`` (O,C,kh,kw), zero padded.

    ``padding="same"`` pads (k-1)/2 and requires an odd kernel; with stride 1 it
    preserves H and W.
    """
    _require_4d(x, "conv2d")
    _require_4d(weight, "conv2d weight")
    B, C, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if C != Ci:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {Ci}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigurationError(f"same padding needs an odd kernel, got {kh}x{kw}")
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
    else:
        ph = pw = int(padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    Hp, Wp = xp.shape[2], xp.shape[3]
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    # im2col once; rows are (b, ho, wo), columns are (c, i, j)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    wmat = weight.data.reshape(O, C * kh * kw)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))

    def bw(g):
        gx = gw = gb = None
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            gcols = np.ascontiguousarray(
                (g2 @ wmat).reshape(B, Ho, Wo, C, kh, kw).transpose(4, 5, 0, 3, 1, 2))
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + hs:stride, j:j + ws:stride] += gcols[i, j]
            gx = gxp[:, :, ph:ph + H, pw:pw + W]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, parents, bw, "conv2d")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2. Ties route the gradient to the first maximum."""
    _require_4d(x, "maxpool2")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {H}x{W}")
    cells = x.data.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
    idx = cells.argmax(axis=-1)
    out = np.take_along_axis(cells, idx[..., None], axis=-1)[..., 0]
    if _monitor is not None:
        top2 = np.sort(cells, axis=-1)[..., -2:]
        _monitor.note(top2[..., 1] - top2[..., 0])

    def bw(g):
        g4 = np.zeros(cells.shape, dtype=g.dtype)
        np.put_along_axis(g4, idx[..., None], g[..., None], axis=-1)
        return (g4.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W),)

    return _make(out, (x,), bw, "maxpool2")


def global_avg_pool(x: Tensor) -> Tensor:
    _require_4d(x, "global_avg_pool")
    B, C, H, W = x.shape

    def bw(g):
        return (np.broadcast_to(g / (H * W), x.shape).astype(x.dtype, copy=True),)

    return _make(x.data.mean(axis=(2, 3), keepdims=True), (x,), bw, "global_avg_pool")


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    B, C, H, W = a.shape
    c = C // (r * r)
    return a.reshape(B, c, r, r, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, c, H * r, W * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    B, c, Hr, Wr = a.shape
    H, W = Hr // r, Wr // r
    return a.reshape(B, c, H, r, W, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, c * r * r, H, W)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """out[b, c, h*r+dy, w*r+dx] = in[b, c*r*r + dy*r + dx, h, w]."""
    _require_4d(x, "pixel_shuffle")
    if x.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle: {x.shape[1]} channels not divisible by {r * r}")

    def bw(g):
        return (_unshuffle(g, r),)

    return _make(_shuffle(x.data, r), (x,), bw, "pixel_shuffle")


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse permutation of :func:`pixel_shuffle`."""
    _require_4d(x, "pixel_unshuffle")
    if x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle: {x.shape[2:]} not divisible by {r}")

    def bw(g):
        return (_shuffle(g, r),)

    return _make(_unshuffle(x.data, r), (x,), bw, "pixel_unshuffle")


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    for t in tensors:
        _require_4d(t, "channel_concat")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"channel_concat: {t.shape} incompatible with {ref}")
    bounds = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=1))

    return _make(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), bw, "channel_concat")


def channel_scale(x: Tensor, scale: Tensor) -> Tensor:
    """Multiply every (H, W) plane of ``x`` by the matching entry of ``scale`` (B,C,1,1)."""
    _require_4d(x, "channel_scale")
    if scale.shape != (x.shape[0], x.shape[1], 1, 1):
        raise ShapeError(f"channel_scale: scale {scale.shape} does not match {x.shape}")

    def bw(g):
        return g * scale.data, (g * x.data).sum(axis=(2, 3), keepdims=True)

    return _make(x.data * scale.data, (x, scale), bw, "channel_scale")


def combine(inputs: Sequence[Tensor], kind: str) -> Tensor:
    """Merge feature maps: ``add`` (same shapes), ``channel_concat`` or ``channel_scale``."""
    if kind == "add":
        first = inputs[0]
        for t in inputs[1:]:
            if t.shape != first.shape:
                raise ShapeError(f"add: shapes {first.shape} and {t.shape} differ")
        out = first
        for t in inputs[1:]:
            out = add(out, t)
        return out
    if kind == "channel_concat":
        return concat_channels(inputs)
    if kind == "channel_scale":
        x, s = inputs
        return channel_scale(x, s)
    raise ConfigurationError(f"unknown combine kind {kind!r}")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Dense layer: ``x`` (B,F) times ``weight.T`` (F,O) plus bias."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        grads = (g @ weight.data, g.T @ x.data)
        return grads + (g.sum(axis=0),) if bias is not None else grads

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, parents, bw, "linear")
