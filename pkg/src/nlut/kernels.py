"""Compiled per-pixel kernels for 3D lattice lookup.

The pixel planes are chunked on a fixed 64K grid and each chunk is processed
by a serial nogil kernel.  Worker threads only change which thread runs a
chunk, never the arithmetic or its order, so results are bit-identical for
any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numba import njit

# Fixed chunk size in pixels.  Must not depend on the worker count.
CHUNK = 1 << 16


@njit(cache=True, nogil=True)
def _trilerp_chunk(table, rp, gp, bp, ro, go, bo, dim, p0, p1):
    # table: (D*D*D, 3) with index i*D*D + j*D + k; planes are flat (P,).
    n = dim - 1
    dd = dim * dim
    for p in range(p0, p1):
        x = rp[p]
        y = gp[p]
        z = bp[p]
        if x < 0.0:
            x = 0.0
        elif x > 1.0:
            x = 1.0
        if y < 0.0:
            y = 0.0
        elif y > 1.0:
            y = 1.0
        if z < 0.0:
            z = 0.0
        elif z > 1.0:
            z = 1.0
        x *= n
        y *= n
        z *= n
        i = int(x)
        j = int(y)
        k = int(z)
        if i > n - 1:
            i = n - 1
        if j > n - 1:
            j = n - 1
        if k > n - 1:
            k = n - 1
        dx = x - i
        dy = y - j
        dz = z - k
        ex = 1.0 - dx
        ey = 1.0 - dy
        ez = 1.0 - dz
        b000 = i * dd + j * dim + k
        b010 = b000 + dim
        b100 = b000 + dd
        b110 = b100 + dim
        w000 = ex * ey * ez
        w001 = ex * ey * dz
        w010 = ex * dy * ez
        w011 = ex * dy * dz
        w100 = dx * ey * ez
        w101 = dx * ey * dz
        w110 = dx * dy * ez
        w111 = dx * dy * dz
        r = (w000 * table[b000, 0] + w001 * table[b000 + 1, 0]
             + w010 * table[b010, 0] + w011 * table[b010 + 1, 0]
             + w100 * table[b100, 0] + w101 * table[b100 + 1, 0]
             + w110 * table[b110, 0] + w111 * table[b110 + 1, 0])
        g = (w000 * table[b000, 1] + w001 * table[b000 + 1, 1]
             + w010 * table[b010, 1] + w011 * table[b010 + 1, 1]
             + w100 * table[b100, 1] + w101 * table[b100 + 1, 1]
             + w110 * table[b110, 1] + w111 * table[b110 + 1, 1])
        b = (w000 * table[b000, 2] + w001 * table[b000 + 1, 2]
             + w010 * table[b010, 2] + w011 * table[b010 + 1, 2]
             + w100 * table[b100, 2] + w101 * table[b100 + 1, 2]
             + w110 * table[b110, 2] + w111 * table[b110 + 1, 2])
        ro[p] = r
        go[p] = g
        bo[p] = b


@njit(cache=True, nogil=True)
def _scatter_chunk(acc, rp, gp, bp, ur, ug, ub, dim, p0, p1):
    # acc: (D*D*D, 3) gradient accumulator for one chunk; upstream planes (P,).
    n = dim - 1
    dd = dim * dim
    for p in range(p0, p1):
        x = rp[p]
        y = gp[p]
        z = bp[p]
        if x < 0.0:
            x = 0.0
        elif x > 1.0:
            x = 1.0
        if y < 0.0:
            y = 0.0
        elif y > 1.0:
            y = 1.0
        if z < 0.0:
            z = 0.0
        elif z > 1.0:
            z = 1.0
        x *= n
        y *= n
        z *= n
        i = int(x)
        j = int(y)
        k = int(z)
        if i > n - 1:
            i = n - 1
        if j > n - 1:
            j = n - 1
        if k > n - 1:
            k = n - 1
        dx = x - i
        dy = y - j
        dz = z - k
        ex = 1.0 - dx
        ey = 1.0 - dy
        ez = 1.0 - dz
        b000 = i * dd + j * dim + k
        b010 = b000 + dim
        b100 = b000 + dd
        b110 = b100 + dim
        w000 = ex * ey * ez
        w001 = ex * ey * dz
        w010 = ex * dy * ez
        w011 = ex * dy * dz
        w100 = dx * ey * ez
        w101 = dx * ey * dz
        w110 = dx * dy * ez
        w111 = dx * dy * dz
        gr = ur[p]
        gg = ug[p]
        gb = ub[p]
        acc[b000, 0] += w000 * gr
        acc[b000, 1] += w000 * gg
        acc[b000, 2] += w000 * gb
        acc[b000 + 1, 0] += w001 * gr
        acc[b000 + 1, 1] += w001 * gg
        acc[b000 + 1, 2] += w001 * gb
        acc[b010, 0] += w010 * gr
        acc[b010, 1] += w010 * gg
        acc[b010, 2] += w010 * gb
        acc[b010 + 1, 0] += w011 * gr
        acc[b010 + 1, 1] += w011 * gg
        acc[b010 + 1, 2] += w011 * gb
        acc[b100, 0] += w100 * gr
        acc[b100, 1] += w100 * gg
        acc[b100, 2] += w100 * gb
        acc[b100 + 1, 0] += w101 * gr
        acc[b100 + 1, 1] += w101 * gg
        acc[b100 + 1, 2] += w101 * gb
        acc[b110, 0] += w110 * gr
        acc[b110, 1] += w110 * gg
        acc[b110, 2] += w110 * gb
        acc[b110 + 1, 0] += w111 * gr
        acc[b110 + 1, 1] += w111 * gg
        acc[b110 + 1, 2] += w111 * gb


def _chunk_bounds(total: int) -> list[tuple[int, int]]:
    return [(p0, min(p0 + CHUNK, total)) for p0 in range(0, total, CHUNK)]


def lookup_planes(table: np.ndarray, planes: np.ndarray, dim: int,
                  workers: int = 1) -> np.ndarray:
    """Trilinear lookup of flat pixel planes (3, P) through an interleaved table."""
    rp, gp, bp = planes[0], planes[1], planes[2]
    out = np.empty_like(planes)
    ro, go, bo = out[0], out[1], out[2]
    bounds = _chunk_bounds(rp.shape[0])
    if workers <= 1 or len(bounds) <= 1:
        for p0, p1 in bounds:
            _trilerp_chunk(table, rp, gp, bp, ro, go, bo, dim, p0, p1)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_trilerp_chunk, table, rp, gp, bp,
                                ro, go, bo, dim, p0, p1)
                    for p0, p1 in bounds]
            for f in futs:
                f.result()
    return out


def scatter_planes(table_dtype: np.dtype, dim: int, planes: np.ndarray,
                   upstream: np.ndarray, workers: int = 1) -> np.ndarray:
    """Accumulate d(loss)/d(table) for a trilinear lookup.

    Returns a (D*D*D, 3) array.  Per-chunk partial sums are merged in chunk
    order, so the result does not depend on the worker count.
    """
    rp, gp, bp = planes[0], planes[1], planes[2]
    ur, ug, ub = upstream[0], upstream[1], upstream[2]
    bounds = _chunk_bounds(rp.shape[0])
    accs = [np.zeros((dim * dim * dim, 3), dtype=table_dtype) for _ in bounds]
    if workers <= 1 or len(bounds) <= 1:
        for acc, (p0, p1) in zip(accs, bounds):
            _scatter_chunk(acc, rp, gp, bp, ur, ug, ub, dim, p0, p1)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_scatter_chunk, acc, rp, gp, bp,
                                ur, ug, ub, dim, p0, p1)
                    for acc, (p0, p1) in zip(accs, bounds)]
            for f in futs:
                f.result()
    total = accs[0]
    for acc in accs[1:]:
        total += acc
    return total
