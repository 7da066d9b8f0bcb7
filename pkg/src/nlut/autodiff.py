"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and remembers the operation that produced it.
Calling backward() on a scalar loss walks the recorded graph once in
reverse topological order and accumulates gradients into the leaves that
asked for them.  Intermediate gradients are dropped as soon as their node
has propagated, so peak memory stays near the forward footprint.

Arithmetic follows numpy broadcasting; gradients are summed back over the
broadcast axes.  All ops preserve the input dtype, so running the same
graph on float64 leaves yields float64 gradients for finite-difference
checks.

A tape is confined to one execution context.  Forward convolutions may use
whatever internal data parallelism the BLAS provides; the sweep itself is
sequential and deterministic.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .lut3d import apply_planes, entries_grad

# When enabled, every op asserts its output is finite and names itself.
DEBUG_CHECK_FINITE = False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"],
                backward_fn: Callable[[np.ndarray], None] | None,
                op: str = "") -> "Tensor":
        """Record an op result.  `backward_fn` receives the output gradient.

        The node only joins the graph if some parent requires gradients;
        otherwise the result is detached and costs nothing on backward.
        """
        if DEBUG_CHECK_FINITE and not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite values in op {op or '?'}")
        out = cls(data)
        if backward_fn is not None and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.parents = tuple(parents)
            # Stored as-is and handed the gradient by the sweep: a closure
            # capturing `out` here would tie every node into a reference
            # cycle, parking whole iteration graphs until a gen2 GC pass.
            out._backward = backward_fn
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _accum(t: Tensor, g: np.ndarray, owned: bool = False) -> None:
    if not t.requires_grad:
        return
    # First assignment: adopt arrays the caller constructed exclusively for
    # this parent, copy anything that may be shared (views, the raw output
    # gradient) so later in-place adds cannot alias them.
    if t.grad is None:
        if owned and g.dtype == t.data.dtype and g.flags.writeable:
            t.grad = g
        else:
            t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast up from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tape:
    """The operations reachable from a root, in topological order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
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
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor) -> Tape:
    """Propagate d(loss)=1 through the graph; returns the tape swept."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("loss is not finite")
    tape = Tape.trace(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node.parents:
                node.grad = None
    return tape


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))
    return Tensor.from_op(a.data + b.data, (a, b), back, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape), owned=True)
    return Tensor.from_op(a.data - b.data, (a, b), back, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape), owned=True)
        _accum(b, _unbroadcast(g * a.data, b.data.shape), owned=True)
    return Tensor.from_op(a.data * b.data, (a, b), back, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape), owned=True)
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
               owned=True)
    return Tensor.from_op(a.data / b.data, (a, b), back, "div")


def scale(a: Tensor, s: float) -> Tensor:
    def back(g):
        _accum(a, g * s, owned=True)
    return Tensor.from_op(a.data * s, (a,), back, "scale")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def back(g):
        # asarray: 0-d operands decay to numpy scalars, which reject out=.
        d = np.asarray(out * out)
        np.subtract(1.0, d, out=d)
        d *= g
        _accum(a, d, owned=True)
    return Tensor.from_op(out, (a,), back, "tanh")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def back(g):
        _accum(a, g * (a.data > 0), owned=True)
    return Tensor.from_op(out, (a,), back, "relu")


def sqrt(a: Tensor) -> Tensor:
    """Square root with subgradient 0 at 0, so norms are safe at their root."""
    out = np.sqrt(a.data)

    def back(g):
        with np.errstate(divide="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        d *= g
        _accum(a, d, owned=True)
    return Tensor.from_op(out, (a,), back, "sqrt")


def square(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, g * (2.0 * a.data), owned=True)
    return Tensor.from_op(a.data * a.data, (a,), back, "square")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape))
    return Tensor.from_op(a.data.sum(axis=axis, keepdims=keepdims),
                          (a,), back, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in np.atleast_1d(axis)])

    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / count, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg / count, a.data.shape))
    return Tensor.from_op(a.data.mean(axis=axis, keepdims=keepdims),
                          (a,), back, "mean")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def back(g):
        _accum(a, g.reshape(a.data.shape))
    return Tensor.from_op(a.data.reshape(shape), (a,), back, "reshape")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    ts = list(tensors)
    sizes = [t.data.shape[axis] for t in ts]

    def back(g):
        start = 0
        for t, size in zip(ts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + size)
            _accum(t, g[tuple(sl)])
            start += size
    return Tensor.from_op(np.concatenate([t.data for t in ts], axis=axis),
                          ts, back, "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        _accum(a, g @ b.data.T, owned=True)
        _accum(b, a.data.T @ g, owned=True)
    return Tensor.from_op(a.data @ b.data, (a, b), back, "matmul")


# ---------------------------------------------------------------------------
# spatial ops on (B, C, H, W) maps


def adaptive_avg_pool(a: Tensor) -> Tensor:
    """Global average over the spatial axes, keeping (B, C, 1, 1)."""
    hw = a.data.shape[2] * a.data.shape[3]

    def back(g):
        _accum(a, np.broadcast_to(g / hw, a.data.shape))
    return Tensor.from_op(a.data.mean(axis=(2, 3), keepdims=True),
                          (a,), back, "adaptive_avg_pool")


def channel_mean(a: Tensor) -> Tensor:
    """Spatial mean per sample and channel, shaped (B, C, 1, 1)."""
    hw = a.data.shape[2] * a.data.shape[3]

    def back(g):
        _accum(a, np.broadcast_to(g / hw, a.data.shape))
    return Tensor.from_op(a.data.mean(axis=(2, 3), keepdims=True),
                          (a,), back, "channel_mean")


def channel_std(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Spatial standard deviation per sample and channel, (B, C, 1, 1).

    Uses the biased variance with `eps` added inside the square root, so
    the result is positive even for constant inputs.
    """
    hw = a.data.shape[2] * a.data.shape[3]
    mu = a.data.mean(axis=(2, 3), keepdims=True)
    centered = a.data - mu
    var = np.mean(centered * centered, axis=(2, 3), keepdims=True)
    std = np.sqrt(var + eps)

    def back(g):
        _accum(a, g * centered / (hw * std), owned=True)
    return Tensor.from_op(std, (a,), back, "channel_std")


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input and (O, C, kh, kw) kernel.

    Lowered to one GEMM per sample over an im2col view.  The column matrix
    is rebuilt on backward instead of saved, trading a little compute for
    a much smaller live set.
    """
    bsz, cin, h, w = x.data.shape
    cout, cin_k, kh, kw = k.data.shape
    if cin != cin_k:
        raise ValueError(f"input has {cin} channels, kernel expects {cin_k}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    k2 = np.ascontiguousarray(k.data.reshape(cout, cin * kh * kw))
    out = np.empty((bsz, cout, ho, wo), dtype=x.data.dtype)
    for b in range(bsz):
        cols = _im2col(x.data[b], kh, kw, ho, wo, stride, pad)
        out[b] = (k2 @ cols).reshape(cout, ho, wo)

    def back(g):
        dk2 = np.zeros_like(k2) if k.requires_grad else None
        dx = np.zeros_like(x.data) if x.requires_grad else None
        for b in range(bsz):
            g2 = g[b].reshape(cout, ho * wo)
            if dk2 is not None:
                cols = _im2col(x.data[b], kh, kw, ho, wo, stride, pad)
                dk2 += g2 @ cols.T
            if dx is not None:
                colsg = (k2.T @ g2).reshape(cin, kh, kw, ho, wo)
                dx[b] = _col2im(colsg, h, w, stride, pad)
        if dk2 is not None:
            _accum(k, dk2.reshape(k.data.shape), owned=True)
        if dx is not None:
            _accum(x, dx, owned=True)
    return Tensor.from_op(out, (x, k), back, "conv2d")


def _im2col(img: np.ndarray, kh: int, kw: int, ho: int, wo: int,
            stride: int, pad: int) -> np.ndarray:
    """Kernel-major patch matrix (C*kh*kw, ho*wo) for one (C, H, W) sample."""
    cin, h, w = img.shape
    if pad:
        xp = np.zeros((cin, h + 2 * pad, w + 2 * pad), dtype=img.dtype)
        xp[:, pad:pad + h, pad:pad + w] = img
    else:
        xp = np.ascontiguousarray(img)
    sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(cin, kh, kw, ho, wo),
        strides=(sc, sh, sw, sh * stride, sw * stride))
    return view.reshape(cin * kh * kw, ho * wo)


def _col2im(colsg: np.ndarray, h: int, w: int, stride: int,
            pad: int) -> np.ndarray:
    """Fold column gradients (C, kh, kw, ho, wo) back onto one input sample."""
    cin, kh, kw, ho, wo = colsg.shape
    xp = np.zeros((cin, h + 2 * pad, w + 2 * pad), dtype=colsg.dtype)
    for dy in range(kh):
        for dx in range(kw):
            xp[:, dy:dy + ho * stride:stride,
               dx:dx + wo * stride:stride] += colsg[:, dy, dx]
    if pad:
        return xp[:, pad:pad + h, pad:pad + w]
    return xp


# ---------------------------------------------------------------------------
# lattice lookup as a graph node


def lut_apply(entries: Tensor, images: np.ndarray, workers: int = 1) -> Tensor:
    """Apply per-sample lattices to a batch of images.

    `entries` is (B, 3, D, D, D); `images` is a plain (B, 3, H, W) array.
    Gradients flow to the lattice entries only, never to the pixels.
    """
    e = entries.data
    if e.ndim != 5 or images.ndim != 4 or e.shape[0] != images.shape[0]:
        raise ValueError(
            f"need (B,3,D,D,D) entries and (B,3,H,W) images, got "
            f"{e.shape} and {images.shape}")
    bsz = images.shape[0]
    dim = e.shape[2]
    out = np.empty_like(images)
    for b in range(bsz):
        flat = apply_planes(e[b], images[b].reshape(3, -1), workers=workers)
        out[b] = flat.reshape(images[b].shape)

    def back(g):
        de = np.empty_like(e)
        for b in range(bsz):
            de[b] = entries_grad(dim, images[b], g[b], workers=workers)
        _accum(entries, de, owned=True)
    return Tensor.from_op(out, (entries,), back, "lut_apply")


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
