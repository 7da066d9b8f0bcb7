"""Training objectives: feature-matching terms and lattice regularizers.

The image-matching terms compare feature pyramids: style distance uses
per-channel mean/std vectors at every level, content distance uses the
deepest level's full response. Both reduce to one number per sample (an
L2 norm, not its square) and then average over the batch, optionally with
per-sample weights so a deduplicated batch can stand in for one with
repeats.

The regularizers act on LUT lattices: a squared-difference smoothness
penalty over all three axes, and a monotonicity hinge that charges each
channel for decreasing along its own axis. Both are exactly zero on their
fixed points (constant lattice, identity lattice), which the tests pin.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _accum
from .errors import NumericError
from .lut3d import Lut3D


@dataclass(frozen=True)
class LossWeights:
    """Scale factors for the four loss terms."""

    style: float = 1.0
    content: float = 4.0
    smooth: float = 1e-4
    mono: float = 10.0

    def __post_init__(self):
        for name in ("style", "content", "smooth", "mono"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} weight must be finite and >= 0, "
                                 f"got {v!r}")
        if self.style == 0 and self.content == 0:
            raise ValueError("style and content weights cannot both be zero")


@dataclass(frozen=True)
class LossReport:
    """Scalar values of every term for one iteration."""

    style: float
    content: float
    smooth: float
    mono: float
    total: float


def _norm_weights(sample_weights, b: int, dtype) -> np.ndarray:
    w = np.asarray(sample_weights, dtype=dtype)
    if w.shape != (b,):
        raise ValueError(f"sample_weights shape {w.shape} does not match "
                         f"batch size {b}")
    if w.min() < 0 or w.sum() <= 0:
        raise ValueError("sample_weights must be non-negative with a "
                         "positive sum")
    return w / w.sum()


def _batch_mean(per_sample: Tensor, sample_weights) -> Tensor:
    if sample_weights is None:
        return ad.tmean(per_sample)
    w = _norm_weights(sample_weights, per_sample.data.shape[0],
                      per_sample.data.dtype)
    return ad.tsum(ad.mul(per_sample, Tensor(w)))


def _sample_norm(diff: Tensor) -> Tensor:
    """L2 norm over everything but the batch axis, (B, ...) -> (B,)."""
    axes = tuple(range(1, len(diff.shape)))
    return ad.sqrt(ad.tsum(ad.square(diff), axis=axes))


def style_loss(stylized, style, sample_weights=None) -> Tensor:
    """Sum over pyramid levels of mean- and std-vector distances.

    Accepts feature pyramids (anything indexable with 4 levels). The style
    side may have batch 1 against a larger stylized batch; its statistics
    broadcast.
    """
    per = None
    for j in range(4):
        a, b = stylized[j], style[j]
        d_mu = ad.sub(ad.channel_mean(a), ad.channel_mean(b))
        d_sd = ad.sub(ad.channel_std(a), ad.channel_std(b))
        level = ad.add(_sample_norm(d_mu), _sample_norm(d_sd))
        per = level if per is None else ad.add(per, level)
    return _batch_mean(per, sample_weights)


def content_loss(stylized_l4: Tensor, content_l4: Tensor,
                 sample_weights=None) -> Tensor:
    """Distance between deepest-level responses, all elements per sample."""
    if stylized_l4.shape != content_l4.shape:
        raise ValueError(f"level-4 shapes differ: {stylized_l4.shape} vs "
                         f"{content_l4.shape}")
    return _batch_mean(_sample_norm(ad.sub(stylized_l4, content_l4)),
                       sample_weights)


def _entries_batch(x: np.ndarray) -> np.ndarray:
    if x.ndim == 4:
        x = x[None]
    if x.ndim != 5 or x.shape[1] != 3 or not (
            x.shape[2] == x.shape[3] == x.shape[4]):
        raise ValueError(f"expected entries shaped (3, D, D, D) or "
                         f"(B, 3, D, D, D), got {x.shape}")
    return x


def _sl(ndim: int, axis: int, s: slice) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def smooth_reg(entries: Tensor, sample_weights=None) -> Tensor:
    """Sum of squared neighbor differences along all axes, batch mean."""
    x = _entries_batch(entries.data)
    squeeze = entries.data.ndim == 4
    b = x.shape[0]
    wn = (np.full(b, 1.0 / b, dtype=x.dtype) if sample_weights is None
          else _norm_weights(sample_weights, b, x.dtype))
    per = np.zeros(b, dtype=x.dtype)
    for axis in (2, 3, 4):
        d = np.diff(x, axis=axis)
        per += (d * d).sum(axis=(1, 2, 3, 4))

    def back(g):
        grad = np.zeros_like(x)
        gw = (2.0 * g) * wn.reshape(-1, 1, 1, 1, 1)
        for axis in (2, 3, 4):
            gd = gw * np.diff(x, axis=axis)
            grad[_sl(5, axis, slice(1, None))] += gd
            grad[_sl(5, axis, slice(None, -1))] -= gd
        _accum(entries, grad[0] if squeeze else grad, owned=True)

    return Tensor.from_op((per * wn).sum(), (entries,), back, "smooth_reg")


def mono_reg(entries: Tensor, sample_weights=None) -> Tensor:
    """Hinge on decreases along each channel's own axis, batch mean.

    Channel 0 is scanned along the first lattice axis, channel 1 along the
    second, channel 2 along the third; increases and ties cost nothing.
    """
    x = _entries_batch(entries.data)
    squeeze = entries.data.ndim == 4
    b = x.shape[0]
    wn = (np.full(b, 1.0 / b, dtype=x.dtype) if sample_weights is None
          else _norm_weights(sample_weights, b, x.dtype))
    per = np.zeros(b, dtype=x.dtype)
    for c in range(3):
        d = np.diff(x[:, c], axis=1 + c)
        per += np.maximum(-d, 0).sum(axis=(1, 2, 3))

    def back(g):
        grad = np.zeros_like(x)
        for c in range(3):
            d = np.diff(x[:, c], axis=1 + c)
            gm = (g * wn.reshape(-1, 1, 1, 1)) * (d < 0).astype(x.dtype)
            ch = grad[:, c]
            ch[_sl(4, 1 + c, slice(None, -1))] += gm
            ch[_sl(4, 1 + c, slice(1, None))] -= gm
        _accum(entries, grad[0] if squeeze else grad, owned=True)

    return Tensor.from_op((per * wn).sum(), (entries,), back, "mono_reg")


def smoothness(lut) -> float:
    """Plain-number smoothness of a lattice, for reporting."""
    e = lut.entries if isinstance(lut, Lut3D) else np.asarray(lut)
    x = _entries_batch(e).astype(np.float64)
    return float(sum((np.diff(x, axis=a) ** 2).sum() for a in (2, 3, 4))
                 / x.shape[0])


def monotonicity_penalty(lut) -> float:
    """Plain-number own-axis decrease penalty, for reporting."""
    e = lut.entries if isinstance(lut, Lut3D) else np.asarray(lut)
    x = _entries_batch(e).astype(np.float64)
    total = sum(np.maximum(-np.diff(x[:, c], axis=1 + c), 0).sum()
                for c in range(3))
    return float(total / x.shape[0])


def total_loss(style: Tensor, content: Tensor, smooth: Tensor, mono: Tensor,
               weights: LossWeights = LossWeights()) -> tuple[Tensor, LossReport]:
    """Weighted sum of the four scalar terms plus a plain-number report.

    Raises NumericError naming the first term that is not finite, before
    the bad value can poison an update.
    """
    parts = {"style": style, "content": content, "smooth": smooth,
             "mono": mono}
    values = {}
    for name, t in parts.items():
        v = float(t.data)
        if not np.isfinite(v):
            raise NumericError(f"{name} loss is not finite: {v!r}")
        values[name] = v
    total = ad.add(
        ad.add(ad.scale(style, weights.style),
               ad.scale(content, weights.content)),
        ad.add(ad.scale(smooth, weights.smooth),
               ad.scale(mono, weights.mono)))
    tv = float(total.data)
    if not np.isfinite(tv):
        raise NumericError(f"total loss is not finite: {tv!r}")
    return total, LossReport(total=tv, **values)


class LossLog:
    """Appends one CSV row per iteration: iter,style,content,smooth,mono,total."""

    HEADER = "iter,style,content,smooth,mono,total"

    def __init__(self, path):
        self._f: io.TextIOBase = open(path, "w", encoding="utf-8", newline="")
        self._f.write(self.HEADER + "\n")
        self._f.flush()

    def append(self, iteration: int, report: LossReport) -> None:
        row = (f"{iteration},{report.style:.10g},{report.content:.10g},"
               f"{report.smooth:.10g},{report.mono:.10g},{report.total:.10g}")
        self._f.write(row + "\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
