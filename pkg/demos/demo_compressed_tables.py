#!/usr/bin/env python3
"""Show how the low-rank factorization shrinks a lattice.

A dense 33-point lattice holds 3*33^3 = 107,811 numbers. The compressed
form keeps a (3, S, W) core per table plus two shared projection matrices,
and reconstructs the dense lattice as identity + M_s @ psi @ M_w. With
S = W = 32 that is a ~30x parameter cut per table, and the projections are
shared across the whole bank of basis tables.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from nlut.clut import (Clut, combine_basis, init_bank, reconstruct,
                       reconstruct_residual)
from nlut.lut3d import apply_color, make_identity

DIM, S, W, N = 33, 32, 32, 20
rng = np.random.default_rng(42)

print("== parameter counts ==")
dense = 3 * DIM**3
core = 3 * S * W
mats_count = DIM * S + W * DIM**2
print(f"dense lattice: {dense:,} floats")
print(f"one compressed core: {core:,} floats "
      f"({dense / core:.1f}x smaller)")
print(f"shared projections: {mats_count:,} floats, amortized over the bank")
print(f"bank of {N}: {N * core + mats_count:,} vs dense {N * dense:,} "
      f"({N * dense / (N * core + mats_count):.1f}x smaller)")

print("\n== zero core reconstructs the exact identity ==")
bank, matrices = init_bank(N, S, W, DIM, seed=42)
zero_core = Clut(S, W, np.zeros((3, S, W), dtype=np.float32))
lut = reconstruct(zero_core, matrices, DIM)
ident = make_identity(DIM)
print(f"max |reconstruct(0) - identity| = "
      f"{float(np.abs(lut.entries - ident.entries).max()):.2e}")

print("\n== a random core perturbs colors smoothly ==")
core_clut = Clut(S, W, rng.uniform(-0.5, 0.5, size=(3, S, W))
                 .astype(np.float32))
lut = reconstruct(core_clut, matrices, DIM)
for color in ((0.2, 0.5, 0.8), (0.5, 0.5, 0.5), (0.9, 0.1, 0.4)):
    out = apply_color(lut, color)
    print(f"  {color} -> ({out.r:+.3f}, {out.g:+.3f}, {out.b:+.3f})")

print("\n== a weighted bank blends like its tables ==")
weights = np.zeros(N, dtype=np.float32)
weights[3] = 1.0
only_third = combine_basis(bank, weights)
print(f"one-hot weight picks one table: max diff "
      f"{float(np.abs(only_third.psi - bank.bases[3].psi).max()):.2e}")
weights = rng.uniform(-1, 1, size=N).astype(np.float32)
blended = combine_basis(bank, weights)
manual = sum(w * b.psi for w, b in zip(weights, bank.bases))
print(f"random weights match the manual sum: max diff "
      f"{float(np.abs(blended.psi - manual).max()):.2e}")
residual = reconstruct_residual(blended, matrices, DIM)
print(f"blended residual lattice shape {residual.shape}, "
      f"rms {float(np.sqrt((residual**2).mean())):.4f}")
