"""Dense float64 arrays with reverse-mode differentiation.

Every op builds a node holding its parents and a closure mapping the output
gradient to one gradient per parent. The graph is rebuilt on every forward
call, so networks are plain Python code.
"""

from __future__ import annotations

import contextlib
import logging
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import expit

logger = logging.getLogger(__name__)

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g):
        # zero subgradient at sqrt(0) keeps |STFT| of silent frames finite
        res = np.zeros_like(out)
        np.divide(0.5 * g, out, out=res, where=out > 0)
        return (res,)

    return _node(out, (a,), bw, "sqrt")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _node(out, (a,), lambda g: (g * expit(x),), "softplus")


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _node(
        np.where(pos, a.data, alpha * a.data),
        (a,),
        lambda g: (np.where(pos, g, alpha * g),),
        "leaky_relu",
    )


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


def clamp_min(a, lo: float) -> Tensor:
    """max(a, lo); the gradient is zero where the floor is active."""
    a = as_tensor(a)
    keep = a.data > lo
    return _node(np.where(keep, a.data, lo), (a,), lambda g: (g * keep,), "clamp_min")


# ---------------------------------------------------------------- reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


# ---------------------------------------------------------------- shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _node(a.data[idx], (a,), bw, "slice")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tensors, bw, "concat")


def pad(a, widths: Sequence[tuple[int, int]], mode: str = "constant") -> Tensor:
    """Pad with zeros (``constant``) or by repeating edge values (``edge``)."""
    a = as_tensor(a)
    widths = [tuple(w) for w in widths]
    if len(widths) != a.ndim:
        raise ShapeError(f"pad: {len(widths)} pad widths for tensor of shape {a.shape}")
    if mode not in ("constant", "edge"):
        raise ValueError(f"pad: unknown mode {mode!r}")
    out = np.pad(a.data, widths, mode=mode)
    inner = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))

    def bw(g):
        if mode == "constant":
            return (g[inner].copy(),)
        g = g.copy()
        for ax, ((lo, hi), n) in enumerate(zip(widths, a.shape)):
            # fold padded borders back onto the edge samples
            if lo:
                head = [slice(None)] * g.ndim
                head[ax] = slice(0, lo)
                edge = [slice(None)] * g.ndim
                edge[ax] = slice(lo, lo + 1)
                g[tuple(edge)] += g[tuple(head)].sum(axis=ax, keepdims=True)
            if hi:
                tail = [slice(None)] * g.ndim
                tail[ax] = slice(lo + n, lo + n + hi)
                edge = [slice(None)] * g.ndim
                edge[ax] = slice(lo + n - 1, lo + n)
                g[tuple(edge)] += g[tuple(tail)].sum(axis=ax, keepdims=True)
            keep = [slice(None)] * g.ndim
            keep[ax] = slice(lo, lo + n)
            g = g[tuple(keep)]
        return (g,)

    return _node(out, (a,), bw, "pad")


def repeat(a, repeats: int, axis: int) -> Tensor:
    """Nearest-neighbour repetition of every element ``repeats`` times along ``axis``."""
    a = as_tensor(a)
    ax = axis % a.ndim

    def bw(g):
        shp = a.shape[:ax] + (a.shape[ax], repeats) + a.shape[ax + 1 :]
        return (g.reshape(shp).sum(axis=ax + 1),)

    return _node(np.repeat(a.data, repeats, axis=ax), (a,), bw, "repeat")


def frame(a, length: int, hop: int) -> Tensor:
    """Split the last axis into overlapping frames: (..., T) -> (..., N, length)."""
    a = as_tensor(a)
    T = a.shape[-1]
    if T < length:
        raise ShapeError(f"frame: signal length {T} shorter than frame length {length}")
    n = (T - length) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(a.data, length, axis=-1)[..., ::hop, :]
    out = np.ascontiguousarray(view[..., :n, :])

    def bw(g):
        full = np.zeros_like(a.data)
        for i in range(n):
            full[..., i * hop : i * hop + length] += g[..., i, :]
        return (full,)

    return _node(out, (a,), bw, "frame")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim != 2 or a.ndim < 2:
        raise ShapeError(f"matmul: expected (..., n, k) @ (k, m), got {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _node(out, (a, b), bw, "matmul")


def conv1d(
    x,
    w,
    b=None,
    dilation: int = 1,
    stride: int = 1,
    padding: str = "causal",
) -> Tensor:
    """1-D convolution over time.

    x: (B, T, C_in), w: (K, C_in, C_out), b: (C_out,). ``padding`` is
    ``causal`` (left pad only, output t sees inputs <= t), ``same``
    (symmetric, odd K) or ``valid``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    K, cin, cout = w.shape
    span = (K - 1) * dilation
    if padding == "causal":
        left, right = span, 0
    elif padding == "same":
        if K % 2 == 0:
            raise ShapeError(f"conv1d: same padding needs an odd filter, got {w.shape}")
        left = right = span // 2
    elif padding == "valid":
        left = right = 0
    else:
        raise ValueError(f"conv1d: unknown padding {padding!r}")
    B, T, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (left, right), (0, 0))) if left or right else x.data
    t_full = xp.shape[1] - span
    if t_full <= 0:
        raise ShapeError(f"conv1d: input {x.shape} too short for filter {w.shape} at dilation {dilation}")
    if K == 1:
        cols = xp
    else:
        cols = np.concatenate([xp[:, k * dilation : k * dilation + t_full] for k in range(K)], axis=2)
    w2 = w.data.reshape(K * cin, cout)
    out = cols @ w2
    if stride > 1:
        out = out[:, ::stride]
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError(f"conv1d: bias shape {b.shape} does not match {cout} output channels")
        out = out + b.data
        parents.append(b)

    def bw(g):
        if stride > 1:
            gf = np.zeros((B, t_full, cout))
            gf[:, ::stride] = g
            g = gf
        gw = (cols.reshape(-1, K * cin).T @ g.reshape(-1, cout)).reshape(K, cin, cout)
        gcols = g @ w2.T
        if K == 1:
            gxp = gcols
        else:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, k * dilation : k * dilation + t_full] += gcols[:, :, k * cin : (k + 1) * cin]
        gx = gxp[:, left : left + T]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 1)))
        return tuple(grads)

    return _node(out, parents, bw, "conv1d")


def conv2d(x, w, b=None, padding: str = "same") -> Tensor:
    """Single-channel 2-D cross-correlation. x: (B, H, W), w: (kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 2:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    kh, kw = w.shape
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"conv2d: same padding needs odd kernels, got {w.shape}")
        ph, pw = kh // 2, kw // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    B, H, W = x.shape
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {w.shape}")
    out = fftconvolve(xp, w.data[None, ::-1, ::-1], mode="valid", axes=(1, 2))
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        parents.append(b)

    def bw(g):
        gxp = fftconvolve(g, w.data[None], mode="full", axes=(1, 2))
        gx = gxp[:, ph : ph + H, pw : pw + W]
        gw = fftconvolve(xp, g[:, ::-1, ::-1], mode="valid", axes=(1, 2)).sum(axis=0)
        grads = [gx, gw]
        if b is not None:
            grads.append(np.asarray(g.sum()).reshape(b.shape))
        return tuple(grads)

    return _node(out, parents, bw, "conv2d")


# ---------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
