#!/usr/bin/env python3
"""Poke at the reverse-mode differentiation engine.

Every differentiable piece of the training stack runs on a small Tensor
type wrapping numpy arrays. Gradients come from one reverse sweep over the
recorded graph. The habit worth copying from this file: when in doubt,
check a gradient against central finite differences in float64.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import nlut.autodiff as ad
from nlut.autodiff import Tensor, backward
from nlut.lut3d import make_identity

rng = np.random.default_rng(3)

print("== a scalar chain ==")
x = Tensor(np.array(0.7), requires_grad=True)
loss = ad.tsum(ad.square(ad.tanh(x)))
backward(loss)
manual = 2 * np.tanh(0.7) * (1 - np.tanh(0.7) ** 2)
print(f"d/dx tanh(x)^2 at 0.7: autodiff {float(x.grad):.6f}, "
      f"closed form {manual:.6f}")

print("\n== broadcasting sums gradients back ==")
a = Tensor(rng.standard_normal((4, 1)), requires_grad=True)
b = Tensor(rng.standard_normal((1, 5)), requires_grad=True)
backward(ad.tsum(ad.mul(a, b)))
print(f"a.grad shape {a.grad.shape} (row sums of b), "
      f"b.grad shape {b.grad.shape} (column sums of a)")
print(f"  a.grad matches: {np.allclose(a.grad, b.data.sum(1, keepdims=True).T)}")

print("\n== finite-difference check on a conv ==")
x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
k = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5, requires_grad=True)
backward(ad.tsum(ad.square(ad.conv2d(x, k, pad=1))))
h = 1e-6
worst = 0.0
for _ in range(10):
    idx = tuple(rng.integers(0, s) for s in k.data.shape)
    saved = k.data[idx]
    k.data[idx] = saved + h
    up = float(ad.tsum(ad.square(ad.conv2d(Tensor(x.data), Tensor(k.data),
                                           pad=1))).data)
    k.data[idx] = saved - h
    dn = float(ad.tsum(ad.square(ad.conv2d(Tensor(x.data), Tensor(k.data),
                                           pad=1))).data)
    k.data[idx] = saved
    fd = (up - dn) / (2 * h)
    worst = max(worst, abs(fd - k.grad[idx]) / max(abs(fd), 1e-12))
print(f"worst relative error over 10 sampled kernel coords: {worst:.2e}")

print("\n== the lattice-apply node ==")
ident = make_identity(9)
entries = Tensor(ident.entries[None].astype(np.float64), requires_grad=True)
planes = rng.uniform(0, 1, size=(1, 3, 8, 8))
out = ad.lut_apply(entries, planes)
backward(ad.tsum(ad.square(out)))
print(f"applied a batched lattice to {planes.shape} planes; "
      f"gradient landed on entries: shape {entries.grad.shape}, "
      f"nonzero fraction {float((entries.grad != 0).mean()):.2f}")
print("(input colors only touch their 8 surrounding lattice corners, "
      "so most of the gradient is exactly zero)")
