"""Compiled im2col gather kernels.

The GEMM-ready column matrix is the hot allocation of every convolution;
building it with numpy slice assignments bottoms out at well under 1 GB/s
because each window row is only a few hundred bytes. The numba kernels below
stream the same gather at memory bandwidth. When numba is unavailable the
numpy fallback keeps everything working, just slower.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f
        return deco


@njit(cache=True)
def _gather_s1(xp, col, kh, kw, ho, wo):
    """Unit-stride im2col: col[(c,kh,kw), (n,ho,wo)] from padded xp."""
    n, c, hp, wp = xp.shape
    for j in range(c):
        for u in range(kh):
            for v in range(kw):
                row = (j * kh + u) * kw + v
                for i in range(n):
                    for yo in range(ho):
                        base = (i * ho + yo) * wo
                        sy = yo + u
                        for xo in range(wo):
                            col[row, base + xo] = xp[i, j, sy, v + xo]


@njit(cache=True)
def _gather_sn(xp, col, kh, kw, stride, ho, wo):
    n, c, hp, wp = xp.shape
    for j in range(c):
        for u in range(kh):
            for v in range(kw):
                row = (j * kh + u) * kw + v
                for i in range(n):
                    for yo in range(ho):
                        base = (i * ho + yo) * wo
                        sy = yo * stride + u
                        for xo in range(wo):
                            col[row, base + xo] = xp[i, j, sy, xo * stride + v]


def _gather_numpy(xp, col, kh, kw, stride, ho, wo):
    n, c = xp.shape[0], xp.shape[1]
    xc = xp.transpose(1, 0, 2, 3)
    col6 = col.reshape(c, kh, kw, n, ho, wo)
    for u in range(kh):
        lim_u = u + (ho - 1) * stride + 1
        for v in range(kw):
            lim_v = v + (wo - 1) * stride + 1
            col6[:, u, v] = xc[:, :, u:lim_u:stride, v:lim_v:stride]


def gather_windows(xp: np.ndarray, col: np.ndarray, kh: int, kw: int,
                   stride: int, ho: int, wo: int) -> None:
    """Fill col[c*kh*kw, n*ho*wo] with sliding windows of contiguous xp."""
    if HAVE_NUMBA:
        if stride == 1:
            _gather_s1(xp, col, kh, kw, ho, wo)
        else:
            _gather_sn(xp, col, kh, kw, stride, ho, wo)
    else:
        _gather_numpy(xp, col, kh, kw, stride, ho, wo)


@njit(cache=True)
def _pool2x2_fwd(x, out, idx):
    """2x2 max with row-major argmax index (0..3) per window."""
    n, c, h2, w2 = out.shape
    for i in range(n):
        for j in range(c):
            for y in range(h2):
                for xo in range(w2):
                    a = x[i, j, 2 * y, 2 * xo]
                    b = x[i, j, 2 * y, 2 * xo + 1]
                    cc = x[i, j, 2 * y + 1, 2 * xo]
                    d = x[i, j, 2 * y + 1, 2 * xo + 1]
                    best, k = a, 0
                    if b > best:
                        best, k = b, 1
                    if cc > best:
                        best, k = cc, 2
                    if d > best:
                        best, k = d, 3
                    out[i, j, y, xo] = best
                    idx[i, j, y, xo] = k


@njit(cache=True)
def _pool2x2_bwd(g, idx, gx):
    n, c, h2, w2 = g.shape
    for i in range(n):
        for j in range(c):
            for y in range(h2):
                for xo in range(w2):
                    k = idx[i, j, y, xo]
                    gx[i, j, 2 * y + k // 2, 2 * xo + k % 2] = g[i, j, y, xo]


def pool2x2_fwd(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, c, h, w = x.shape
    out = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
    idx = np.empty((n, c, h // 2, w // 2), dtype=np.uint8)
    if HAVE_NUMBA:
        _pool2x2_fwd(x, out, idx)
    else:
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5) \
            .reshape(n, c, h // 2, w // 2, 4)
        idx[:] = win.argmax(axis=-1)
        out[:] = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def pool2x2_bwd(g: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    n, c, h2, w2 = g.shape
    gx = np.zeros((n, c, h, w), dtype=g.dtype)
    if HAVE_NUMBA:
        _pool2x2_bwd(g, idx, gx)
    else:
        g4 = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
        np.put_along_axis(g4, idx[..., None].astype(np.intp), g[..., None], axis=-1)
        gx[:] = g4.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5) \
            .reshape(n, c, h, w)
    return gx
