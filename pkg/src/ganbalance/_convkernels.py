"""Direct convolution kernels for the float32 production path.

im2col+GEMM streams a column matrix ~25x the input size through memory for
every pass; on bandwidth-limited CPUs that dominates the arithmetic. These
kernels convolve in place with the working planes L1-resident, fully
unrolling the tap loops for the two kernel sizes the networks actually use
(5x5 classifier stages, 4x4 GAN stages). Generic-size fallbacks cover other
shapes; float64 verification runs use the im2col path instead.

All kernels expect C-contiguous float32 arrays, with spatial padding already
applied to the input. Gradient-vs-input passes are expressed as forward
correlations of the padded output gradient with the flipped, channel-swapped
kernel, so only forward and weight-gradient kernels exist here.
"""

from __future__ import annotations

import numpy as np

from ._imkernels import HAVE_NUMBA, njit



@njit(cache=True, fastmath=True)
def conv5_s1_fwd(xp, w, b, y):
    n, ci, hp, wp = xp.shape
    co = w.shape[0]
    ho, wo = y.shape[2], y.shape[3]
    for i in range(n):
        for o in range(co):
            for yo in range(ho):
                acc = y[i, o, yo]
                bo = b[o]
                for xo in range(wo):
                    acc[xo] = bo
                for j in range(ci):
                    x0 = xp[i, j, yo]
                    x1 = xp[i, j, yo + 1]
                    x2 = xp[i, j, yo + 2]
                    x3 = xp[i, j, yo + 3]
                    x4 = xp[i, j, yo + 4]
                    w0 = w[o, j, 0]
                    w1 = w[o, j, 1]
                    w2 = w[o, j, 2]
                    w3 = w[o, j, 3]
                    w4 = w[o, j, 4]
                    for xo in range(wo):
                        s = acc[xo]
                        s += w0[0] * x0[xo] + w0[1] * x0[xo + 1] + w0[2] * x0[xo + 2] \
                            + w0[3] * x0[xo + 3] + w0[4] * x0[xo + 4]
                        s += w1[0] * x1[xo] + w1[1] * x1[xo + 1] + w1[2] * x1[xo + 2] \
                            + w1[3] * x1[xo + 3] + w1[4] * x1[xo + 4]
                        s += w2[0] * x2[xo] + w2[1] * x2[xo + 1] + w2[2] * x2[xo + 2] \
                            + w2[3] * x2[xo + 3] + w2[4] * x2[xo + 4]
                        s += w3[0] * x3[xo] + w3[1] * x3[xo + 1] + w3[2] * x3[xo + 2] \
                            + w3[3] * x3[xo + 3] + w3[4] * x3[xo + 4]
                        s += w4[0] * x4[xo] + w4[1] * x4[xo + 1] + w4[2] * x4[xo + 2] \
                            + w4[3] * x4[xo + 3] + w4[4] * x4[xo + 4]
                        acc[xo] = s


@njit(cache=True, fastmath=True)
def conv4_s1_fwd(xp, w, b, y):
    n, ci, hp, wp = xp.shape
    co = w.shape[0]
    ho, wo = y.shape[2], y.shape[3]
    for i in range(n):
        for o in range(co):
            for yo in range(ho):
                acc = y[i, o, yo]
                bo = b[o]
                for xo in range(wo):
                    acc[xo] = bo
                for j in range(ci):
                    x0 = xp[i, j, yo]
                    x1 = xp[i, j, yo + 1]
                    x2 = xp[i, j, yo + 2]
                    x3 = xp[i, j, yo + 3]
                    w0 = w[o, j, 0]
                    w1 = w[o, j, 1]
                    w2 = w[o, j, 2]
                    w3 = w[o, j, 3]
                    for xo in range(wo):
                        s = acc[xo]
                        s += w0[0] * x0[xo] + w0[1] * x0[xo + 1] \
                            + w0[2] * x0[xo + 2] + w0[3] * x0[xo + 3]
                        s += w1[0] * x1[xo] + w1[1] * x1[xo + 1] \
                            + w1[2] * x1[xo + 2] + w1[3] * x1[xo + 3]
                        s += w2[0] * x2[xo] + w2[1] * x2[xo + 1] \
                            + w2[2] * x2[xo + 2] + w2[3] * x2[xo + 3]
                        s += w3[0] * x3[xo] + w3[1] * x3[xo + 1] \
                            + w3[2] * x3[xo + 2] + w3[3] * x3[xo + 3]
                        acc[xo] = s


@njit(cache=True, fastmath=True)
def conv_sn_fwd(xp, w, b, y, stride):
    """Generic kernel size and stride."""
    n, ci, hp, wp = xp.shape
    co, _, kh, kw = w.shape
    ho, wo = y.shape[2], y.shape[3]
    for i in range(n):
        for o in range(co):
            for yo in range(ho):
                acc = y[i, o, yo]
                bo = b[o]
                for xo in range(wo):
                    acc[xo] = bo
                for j in range(ci):
                    for u in range(kh):
                        xrow = xp[i, j, yo * stride + u]
                        wrow = w[o, j, u]
                        for v in range(kw):
                            wv = wrow[v]
                            for xo in range(wo):
                                acc[xo] += wv * xrow[xo * stride + v]


@njit(cache=True, fastmath=True)
def conv2x2_s1_acc(xp, w, y):
    """Accumulating 2x2 stride-1 correlation: y += conv(xp, w)."""
    n, ci, hp, wp = xp.shape
    co = w.shape[0]
    ho, wo = y.shape[2], y.shape[3]
    for i in range(n):
        for o in range(co):
            for yo in range(ho):
                acc = y[i, o, yo]
                for j in range(ci):
                    x0 = xp[i, j, yo]
                    x1 = xp[i, j, yo + 1]
                    w00 = w[o, j, 0, 0]
                    w01 = w[o, j, 0, 1]
                    w10 = w[o, j, 1, 0]
                    w11 = w[o, j, 1, 1]
                    for xo in range(wo):
                        acc[xo] += w00 * x0[xo] + w01 * x0[xo + 1] \
                            + w10 * x1[xo] + w11 * x1[xo + 1]


@njit(cache=True, fastmath=True)
def conv_s1_dw(xp, g, dw):
    """Stride-1 weight gradient: dw[o,j,u,v] = sum xp[i,j,yo+u,xo+v]*g[i,o,yo,xo].

    One reduction accumulator per kernel column, so the inner sweep keeps
    kw independent vectorizable chains. """
    n, ci, hp, wp = xp.shape
    co, _, kh, kw = dw.shape
    ho, wo = g.shape[2], g.shape[3]
    zero = xp[0, 0, 0, 0] * 0  # accumulator in the array dtype
    dw[:] = 0.0
    for oj in range(co * ci):
        o = oj // ci
        j = oj % ci
        for i in range(n):
            for u in range(kh):
                if kw == 5:
                    a0 = zero
                    a1 = zero
                    a2 = zero
                    a3 = zero
                    a4 = zero
                    for yo in range(ho):
                        grow = g[i, o, yo]
                        xrow = xp[i, j, yo + u]
                        for xo in range(wo):
                            gv = grow[xo]
                            a0 += gv * xrow[xo]
                            a1 += gv * xrow[xo + 1]
                            a2 += gv * xrow[xo + 2]
                            a3 += gv * xrow[xo + 3]
                            a4 += gv * xrow[xo + 4]
                    dw[o, j, u, 0] += a0
                    dw[o, j, u, 1] += a1
                    dw[o, j, u, 2] += a2
                    dw[o, j, u, 3] += a3
                    dw[o, j, u, 4] += a4
                elif kw == 2:
                    a0 = zero
                    a1 = zero
                    for yo in range(ho):
                        grow = g[i, o, yo]
                        xrow = xp[i, j, yo + u]
                        for xo in range(wo):
                            gv = grow[xo]
                            a0 += gv * xrow[xo]
                            a1 += gv * xrow[xo + 1]
                    dw[o, j, u, 0] += a0
                    dw[o, j, u, 1] += a1
                else:
                    for v in range(kw):
                        acc = zero
                        for yo in range(ho):
                            grow = g[i, o, yo]
                            xrow = xp[i, j, yo + u]
                            for xo in range(wo):
                                acc += grow[xo] * xrow[xo + v]
                        dw[o, j, u, v] += acc


@njit(cache=True, fastmath=True)
def conv_sn_dw(xp, g, dw, stride):
    n, ci, hp, wp = xp.shape
    co, _, kh, kw = dw.shape
    ho, wo = g.shape[2], g.shape[3]
    zero = xp[0, 0, 0, 0] * 0
    dw[:] = 0.0
    for oj in range(co * ci):
        o = oj // ci
        j = oj % ci
        for i in range(n):
            for u in range(kh):
                for v in range(kw):
                    acc = zero
                    for yo in range(ho):
                        grow = g[i, o, yo]
                        xrow = xp[i, j, yo * stride + u]
                        for xo in range(wo):
                            acc += grow[xo] * xrow[xo * stride + v]
                    dw[o, j, u, v] += acc


def _phases_s2(xp: np.ndarray, ho: int, wo: int):
    """Split padded input into its four stride-2 phases, sized (ho+1, wo+1).

    A stride-2 4x4 correlation equals the sum of four unit-stride 2x2
    correlations, one per input parity class; this turns strided gathers
    into contiguous sweeps.
    """
    n, ci, hp, wp = xp.shape
    out = []
    for a in (0, 1):
        for b in (0, 1):
            rows = min((hp - a + 1) // 2, ho + 1)
            cols = min((wp - b + 1) // 2, wo + 1)
            ph = np.zeros((n, ci, ho + 1, wo + 1), dtype=xp.dtype)
            ph[:, :, :rows, :cols] = xp[:, :, a:a + 2 * rows:2, b:b + 2 * cols:2]
            out.append(ph)
    return out


def _phase_fwd_s2k4(xp, w, b, y):
    ho, wo = y.shape[2], y.shape[3]
    y[:] = b[None, :, None, None]
    for ph, (a, bb) in zip(_phases_s2(xp, ho, wo),
                           ((0, 0), (0, 1), (1, 0), (1, 1))):
        w_ab = np.ascontiguousarray(w[:, :, a::2, bb::2])
        conv2x2_s1_acc(ph, w_ab, y)


def _phase_dw_s2k4(xp, g, dw):
    co, ci = dw.shape[0], dw.shape[1]
    ho, wo = g.shape[2], g.shape[3]
    for ph, (a, bb) in zip(_phases_s2(xp, ho, wo),
                           ((0, 0), (0, 1), (1, 0), (1, 1))):
        dw2 = np.empty((co, ci, 2, 2), dtype=dw.dtype)
        conv_s1_dw(ph, g, dw2)
        dw[:, :, a::2, bb::2] = dw2


def phase_adjoint_s2k4(gy: np.ndarray, w: np.ndarray, out_hw) -> np.ndarray:
    """Input adjoint of a stride-2 4x4 pad-1 correlation, by output phases.

    Equivalent to dilate-by-2 / pad-2 / correlate-with-flipped-kernel, but
    runs four 2x2 unit-stride correlations at half resolution instead of one
    4x4 pass over a 3/4-zeros buffer.
    """
    n = gy.shape[0]
    co, ci = w.shape[0], w.shape[1]
    h, w_ = out_hw
    hh, wh = h // 2, w_ // 2
    wf = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # [ci, co, 4, 4] flipped
    gp = np.pad(gy, ((0, 0), (0, 0), (1, 1), (1, 1)))
    y = np.empty((n, ci, h, w_), dtype=gy.dtype)
    buf = np.zeros((n, ci, hh, wh), dtype=gy.dtype)
    for a in (0, 1):
        for b in (0, 1):
            k_ab = np.ascontiguousarray(wf[:, :, a::2, b::2])
            src = np.ascontiguousarray(gp[:, :, a:a + hh + 1, b:b + wh + 1])
            buf[:] = 0.0
            conv2x2_s1_acc(src, k_ab, buf)
            y[:, :, a::2, b::2] = buf
    return y


def direct_path_available(dtype, stride: int) -> bool:
    return HAVE_NUMBA and dtype == np.float32


def adjoint_fast_path(dtype, stride, kh, kw, padding, in_h, in_w, out_hw) -> bool:
    return (HAVE_NUMBA and dtype == np.float32 and stride == 2
            and kh == 4 and kw == 4 and padding == 1
            and out_hw == (2 * in_h, 2 * in_w))


def run_fwd(xp: np.ndarray, w: np.ndarray, b: np.ndarray, y: np.ndarray,
            stride: int) -> None:
    kh, kw = w.shape[2], w.shape[3]
    if stride == 1 and kh == 5 and kw == 5:
        conv5_s1_fwd(xp, w, b, y)
    elif stride == 1 and kh == 4 and kw == 4:
        conv4_s1_fwd(xp, w, b, y)
    elif stride == 2 and kh == 4 and kw == 4:
        _phase_fwd_s2k4(xp, w, b, y)
    else:
        conv_sn_fwd(xp, w, b, y, stride)


def run_dw(xp: np.ndarray, g: np.ndarray, dw: np.ndarray, stride: int) -> None:
    kh, kw = dw.shape[2], dw.shape[3]
    if stride == 1:
        conv_s1_dw(xp, g, dw)
    elif stride == 2 and kh == 4 and kw == 4:
        _phase_dw_s2k4(xp, g, dw)
    else:
        conv_sn_dw(xp, g, dw, stride)
