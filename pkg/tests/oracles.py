"""Independent reference implementations the tests compare against.

Everything here is written as plain scalar loops in float64, directly from
the defining math, and deliberately shares no code with the package.
"""

from __future__ import annotations

import numpy as np


def trilerp_ref(entries: np.ndarray, color) -> tuple[float, float, float]:
    """Brute-force 8-corner trilinear lookup of one color."""
    dim = entries.shape[1]
    n = dim - 1
    pos = []
    for c in range(3):
        v = min(max(float(color[c]), 0.0), 1.0) * n
        pos.append(v)
    i0 = [min(int(np.floor(v)), n - 1) for v in pos]
    frac = [pos[a] - i0[a] for a in range(3)]
    out = [0.0, 0.0, 0.0]
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                w = ((frac[0] if di else 1.0 - frac[0])
                     * (frac[1] if dj else 1.0 - frac[1])
                     * (frac[2] if dk else 1.0 - frac[2]))
                for c in range(3):
                    out[c] += w * float(entries[c, i0[0] + di,
                                                i0[1] + dj, i0[2] + dk])
    return out[0], out[1], out[2]


def apply_image_ref(entries: np.ndarray, planes: np.ndarray) -> np.ndarray:
    """Per-pixel loop over trilerp_ref; planes shaped (3, H, W)."""
    out = np.empty(planes.shape, dtype=np.float64)
    _, h, w = planes.shape
    for y in range(h):
        for x in range(w):
            r, g, b = trilerp_ref(entries, planes[:, y, x])
            out[0, y, x] = r
            out[1, y, x] = g
            out[2, y, x] = b
    return out


def reconstruct_ref(psi: np.ndarray, m_s: np.ndarray, m_w: np.ndarray,
                    dim: int) -> np.ndarray:
    """Triple-loop matrix product M_s . psi . M_w per channel, plus identity."""
    s_dim, w_dim = psi.shape[1], psi.shape[2]
    entries = np.zeros((3, dim, dim, dim), dtype=np.float64)
    lat = [a / (dim - 1) for a in range(dim)]
    for c in range(3):
        flat = np.zeros((dim, dim * dim), dtype=np.float64)
        for d in range(dim):
            for e in range(dim * dim):
                acc = 0.0
                for s in range(s_dim):
                    for w in range(w_dim):
                        acc += float(m_s[d, s]) * float(psi[c, s, w]) \
                            * float(m_w[w, e])
                flat[d, e] = acc
        entries[c] = flat.reshape(dim, dim, dim)
    for i in range(dim):
        for j in range(dim):
            for k in range(dim):
                entries[0, i, j, k] += lat[i]
                entries[1, i, j, k] += lat[j]
                entries[2, i, j, k] += lat[k]
    return entries


def conv2d_ref(x: np.ndarray, k: np.ndarray, stride: int = 1,
               pad: int = 0) -> np.ndarray:
    """Six-loop cross-correlation; x is (B, C, H, W), k is (O, C, kh, kw)."""
    bsz, cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    xp = np.zeros((bsz, cin, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((bsz, cout, ho, wo), dtype=np.float64)
    for b in range(bsz):
        for o in range(cout):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += float(xp[b, c, y * stride + dy,
                                                xx * stride + dx]) \
                                    * float(k[o, c, dy, dx])
                    out[b, o, y, xx] = acc
    return out


def numeric_grad(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function, elementwise."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = f()
        flat[idx] = orig - h
        fm = f()
        flat[idx] = orig
        gf[idx] = (fp - fm) / (2.0 * h)
    return g


def numeric_grad_at(f, x: np.ndarray, indices, h: float = 1e-4) -> np.ndarray:
    """Central differences at selected flat indices only."""
    out = np.zeros(len(indices), dtype=np.float64)
    flat = x.reshape(-1)
    for pos, idx in enumerate(indices):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = f()
        flat[idx] = orig - h
        fm = f()
        flat[idx] = orig
        out[pos] = (fp - fm) / (2.0 * h)
    return out


def grad_close(analytic: np.ndarray, numeric: np.ndarray,
               rtol: float = 1e-3, atol: float = 1e-6) -> bool:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return bool(np.all(np.abs(a - n) <= atol + rtol * np.abs(n)))
