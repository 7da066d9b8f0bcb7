"""Compressed lookup tables: a small per-channel core matrix plus two shared
projection matrices that inflate it to a full lattice.

A compressed table stores psi with shape (3, S, W).  Projection matrices
M_s (D x S) and M_w (W x D^2) reconstruct channel c as M_s . psi[c] . M_w,
reshaped to (D, D, D).  The product is a residual added on top of the
identity lattice, so an all-zero psi reconstructs the identity transform
exactly.  A bank of N basis tables is combined by a weight vector before
reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lut3d import Lut3D, make_identity


@dataclass(frozen=True)
class Clut:
    """One compressed table: per-channel core matrices shaped (3, S, W)."""

    s: int
    w: int
    psi: np.ndarray

    def __post_init__(self) -> None:
        want = (3, self.s, self.w)
        if not isinstance(self.psi, np.ndarray) or self.psi.shape != want:
            raise ValueError(f"psi must have shape {want}")


@dataclass(frozen=True)
class TransformMatrices:
    """Shared reconstruction matrices M_s (D x S) and M_w (W x D^2)."""

    m_s: np.ndarray
    m_w: np.ndarray

    def __post_init__(self) -> None:
        if self.m_s.ndim != 2 or self.m_w.ndim != 2:
            raise ValueError("m_s and m_w must be 2-D")

    @property
    def dim(self) -> int:
        return self.m_s.shape[0]


@dataclass(frozen=True)
class BasisBank:
    """N compressed tables sharing one (S, W) geometry."""

    n: int
    bases: tuple[Clut, ...]

    def __post_init__(self) -> None:
        if self.n != len(self.bases) or self.n < 1:
            raise ValueError("bank size must match the number of bases")
        s, w = self.bases[0].s, self.bases[0].w
        for b in self.bases:
            if (b.s, b.w) != (s, w):
                raise ValueError("all bases must share the same (S, W)")

    @property
    def geometry(self) -> tuple[int, int]:
        return self.bases[0].s, self.bases[0].w

    def stacked(self) -> np.ndarray:
        """The bank as one (N, 3, S, W) array."""
        return np.stack([b.psi for b in self.bases])


def combine_basis(bank: BasisBank, weights: np.ndarray) -> Clut:
    """Weighted sum of the basis tables.  Weights are unconstrained reals."""
    w = np.asarray(weights)
    if w.shape != (bank.n,):
        raise ValueError(
            f"expected {bank.n} weights, got shape {w.shape}")
    psi = np.tensordot(w, bank.stacked(), axes=(0, 0))
    s, wd = bank.geometry
    return Clut(s, wd, psi)


def combine_basis_backward(bank: BasisBank, weights: np.ndarray,
                           upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a scalar loss through combine_basis.

    Returns (d_weights (N,), d_bases (N, 3, S, W)).
    """
    stacked = bank.stacked()
    d_weights = np.tensordot(stacked, upstream, axes=([1, 2, 3], [0, 1, 2]))
    w = np.asarray(weights).reshape(-1, 1, 1, 1)
    d_bases = w * upstream[None]
    return d_weights, d_bases


def reconstruct(clut: Clut, mats: TransformMatrices, dim: int) -> Lut3D:
    """Inflate a compressed table to a dense Lut3D as identity + residual."""
    entries = make_identity(dim, dtype=clut.psi.dtype).entries.copy()
    entries += reconstruct_residual(clut, mats, dim)
    return Lut3D(dim, entries)


def reconstruct_residual(clut: Clut, mats: TransformMatrices,
                         dim: int) -> np.ndarray:
    """The M_s . psi . M_w product reshaped to (3, D, D, D), without identity."""
    _check_geometry(clut, mats, dim)
    out = np.empty((3, dim, dim, dim), dtype=clut.psi.dtype)
    for c in range(3):
        flat = mats.m_s @ clut.psi[c] @ mats.m_w
        out[c] = flat.reshape(dim, dim, dim)
    return out


def reconstruct_backward(clut: Clut, mats: TransformMatrices, dim: int,
                         upstream: np.ndarray
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a scalar loss through reconstruct.

    `upstream` is d(loss)/d(entries) shaped (3, D, D, D).  Returns
    (d_psi, d_m_s, d_m_w).  The identity term contributes nothing.
    """
    _check_geometry(clut, mats, dim)
    if upstream.shape != (3, dim, dim, dim):
        raise ValueError(
            f"upstream must have shape (3, {dim}, {dim}, {dim})")
    d_psi = np.empty_like(clut.psi)
    d_m_s = np.zeros_like(mats.m_s)
    d_m_w = np.zeros_like(mats.m_w)
    for c in range(3):
        g = upstream[c].reshape(dim, dim * dim)
        d_psi[c] = mats.m_s.T @ g @ mats.m_w.T
        d_m_s += g @ (clut.psi[c] @ mats.m_w).T
        d_m_w += (mats.m_s @ clut.psi[c]).T @ g
    return d_psi, d_m_s, d_m_w


def init_bank(n: int, s: int, w: int, dim: int,
              seed: int = 0, dtype=np.float32
              ) -> tuple[BasisBank, TransformMatrices]:
    """Fresh bank and matrices.

    Basis cores start at scale 0.01 and the projection matrices at scale
    1/sqrt(max dimension), so a freshly reconstructed table sits close to
    the identity regardless of the combination weights.
    """
    if n < 1 or s < 1 or w < 1 or dim < 2:
        raise ValueError("bank sizes must be positive and dim >= 2")
    rng = np.random.default_rng(seed)
    bases = tuple(
        Clut(s, w, rng.uniform(-0.01, 0.01, size=(3, s, w)).astype(dtype))
        for _ in range(n))
    a_s = 1.0 / np.sqrt(max(dim, s))
    a_w = 1.0 / np.sqrt(max(w, dim * dim))
    mats = TransformMatrices(
        m_s=rng.uniform(-a_s, a_s, size=(dim, s)).astype(dtype),
        m_w=rng.uniform(-a_w, a_w, size=(w, dim * dim)).astype(dtype))
    return BasisBank(n, bases), mats


def _check_geometry(clut: Clut, mats: TransformMatrices, dim: int) -> None:
    if mats.m_s.shape != (dim, clut.s):
        raise ValueError(
            f"m_s shape {mats.m_s.shape} does not match D={dim}, S={clut.s}")
    if mats.m_w.shape != (clut.w, dim * dim):
        raise ValueError(
            f"m_w shape {mats.m_w.shape} does not match W={clut.w}, D={dim}")
