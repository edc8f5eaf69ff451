"""Hot kernels: convection product and the masked sup-norm scan.

Each kernel has a compiled loop version and a vectorized numpy version; the
module-level names point at whichever one ``_accel.USE_NUMBA`` selects. Both
stay importable (``*_numba`` / ``*_numpy``) for the equivalence tests and
the benchmark.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit


# ---------------------------------------------------------------- convection
def convect_numpy(grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(grid.nvel)
    for d, p, q in grid.conv_terms:
        out += d @ ((p @ a) * (q @ b))
    return out


@njit
def _xflux(ax, bx, c, j, nx):
    a0 = ax[c - 1, j] if c >= 1 else 0.0
    a1 = ax[c, j] if c <= nx - 2 else 0.0
    b0 = bx[c - 1, j] if c >= 1 else 0.0
    b1 = bx[c, j] if c <= nx - 2 else 0.0
    return 0.25 * (a0 + a1) * (b0 + b1)


@njit
def _yflux(ay, by, i, c, ny):
    a0 = ay[i, c - 1] if c >= 1 else 0.0
    a1 = ay[i, c] if c <= ny - 2 else 0.0
    b0 = by[i, c - 1] if c >= 1 else 0.0
    b1 = by[i, c] if c <= ny - 2 else 0.0
    return 0.25 * (a0 + a1) * (b0 + b1)


@njit
def _convect_loops(ax, ay, bx, by, hx, hy, cx, cy):
    nx = ay.shape[0]
    ny = ax.shape[1]
    # x-momentum at full indices i = 1..nx-1 (array row i-1); corner fluxes vanish on walls
    for i in range(1, nx):
        for j in range(ny):
            f0 = _xflux(ax, bx, i - 1, j, nx)
            f1 = _xflux(ax, bx, i, j, nx)
            g0 = 0.0
            if j >= 1:
                g0 = 0.25 * (ay[i - 1, j - 1] + ay[i, j - 1]) * (bx[i - 1, j - 1] + bx[i - 1, j])
            g1 = 0.0
            if j + 1 <= ny - 1:
                g1 = 0.25 * (ay[i - 1, j] + ay[i, j]) * (bx[i - 1, j] + bx[i - 1, j + 1])
            cx[i - 1, j] = (f1 - f0) / hx + (g1 - g0) / hy
    # y-momentum at full indices j = 1..ny-1 (array column j-1)
    for i in range(nx):
        for j in range(1, ny):
            f0 = _yflux(ay, by, i, j - 1, ny)
            f1 = _yflux(ay, by, i, j, ny)
            g0 = 0.0
            if i >= 1:
                g0 = 0.25 * (ax[i - 1, j - 1] + ax[i - 1, j]) * (by[i - 1, j - 1] + by[i, j - 1])
            g1 = 0.0
            if i + 1 <= nx - 1:
                g1 = 0.25 * (ax[i, j - 1] + ax[i, j]) * (by[i, j - 1] + by[i + 1, j - 1])
            cy[i, j - 1] = (g1 - g0) / hx + (f1 - f0) / hy


def convect_numba(grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    nx, ny, n1 = grid.nx, grid.ny, grid.n1
    out = np.empty(grid.nvel)
    cx = out[:n1].reshape(nx - 1, ny)
    cy = out[n1:].reshape(nx, ny - 1)
    _convect_loops(
        a[:n1].reshape(nx - 1, ny), a[n1:].reshape(nx, ny - 1),
        b[:n1].reshape(nx - 1, ny), b[n1:].reshape(nx, ny - 1),
        grid.hx, grid.hy, cx, cy,
    )
    return out


# ------------------------------------------------------------- masked absmax
def absmax_masked_numpy(arr: np.ndarray, mask: np.ndarray) -> tuple[float, int, int]:
    """Largest |arr| over ``mask`` with its first (lexicographic) location."""
    flat = np.where(mask, np.abs(arr), -1.0).ravel()
    k = int(np.argmax(flat))
    if flat[k] < 0.0:
        return 0.0, -1, -1
    i, j = divmod(k, arr.shape[1])
    return float(flat[k]), i, j


@njit
def _absmax_loops(arr, mask):
    best = -1.0
    bi = -1
    bj = -1
    for i in range(arr.shape[0]):
        for j in range(arr.shape[1]):
            if mask[i, j]:
                v = abs(arr[i, j])
                if v > best:
                    best = v
                    bi = i
                    bj = j
    return best, bi, bj


def absmax_masked_numba(arr: np.ndarray, mask: np.ndarray) -> tuple[float, int, int]:
    best, i, j = _absmax_loops(np.ascontiguousarray(arr, dtype=np.float64), np.ascontiguousarray(mask))
    if i < 0:
        return 0.0, -1, -1
    return float(best), int(i), int(j)


if USE_NUMBA:
    convect_packed = convect_numba
    absmax_masked = absmax_masked_numba
else:
    convect_packed = convect_numpy
    absmax_masked = absmax_masked_numpy
