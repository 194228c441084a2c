"""Differentiable network primitives built on the Tensor engine.

Convolutions use the cross-correlation convention (no kernel flip) and are
implemented as im2col + one GEMM per layer; the transposed convolution is the
exact adjoint of ``conv2d`` for the same stride/padding, realised by zero
dilation followed by a stride-1 correlation with the spatially flipped,
channel-swapped kernel. All three convolution gradients reuse the same two
GEMM cores, so the adjoint identity holds to rounding error by construction.

Data dtype follows the inputs (float32 in production, float64 in the
gradient-verification suite); small reductions (means, variances, losses)
accumulate in float64 regardless.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._convkernels import (adjoint_fast_path, direct_path_available,
                           phase_adjoint_s2k4, run_dw, run_fwd)
from ._imkernels import gather_windows, pool2x2_bwd, pool2x2_fwd
from .tensor import ShapeError, Tensor, grad_enabled

PROB_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# raw correlation cores (numpy in, numpy out)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding):
    """Gather sliding windows into a [C*kh*kw, N*Ho*Wo] GEMM operand."""
    n, c, h, w = x.shape
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    else:
        x = np.ascontiguousarray(x)
    hp, wp = x.shape[2], x.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    col = np.empty((c * kh * kw, n * ho * wo), dtype=x.dtype)
    gather_windows(x, col, kh, kw, stride, ho, wo)
    return col, ho, wo


def _pad_contig(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph or pw:
        return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    return np.ascontiguousarray(x)


def _corr2d_gemm(x: np.ndarray, w: np.ndarray, b, stride: int, padding):
    """im2col+GEMM correlation; returns (y, x_col, ho, wo)."""
    n = x.shape[0]
    co, ci, kh, kw = w.shape
    x_col, ho, wo = _im2col(x, kh, kw, stride, padding)
    y2d = w.reshape(co, ci * kh * kw) @ x_col  # [Co, N*Ho*Wo]
    if b is not None:
        y2d += b[:, None]
    y = np.ascontiguousarray(y2d.reshape(co, n, ho, wo).transpose(1, 0, 2, 3))
    return y, x_col, ho, wo


def _corr2d_weight_grad(x_col: np.ndarray, gy: np.ndarray, wshape) -> np.ndarray:
    """Weight gradient from a saved im2col matrix and the output gradient."""
    co, ci, kh, kw = wshape
    g2d = gy.transpose(1, 0, 2, 3).reshape(co, -1)
    return (g2d @ x_col.T).reshape(co, ci, kh, kw)


def _corr2d(x: np.ndarray, w: np.ndarray, b, stride: int, padding,
            need_ctx: bool = False):
    """Cross-correlate x[N,Ci,H,W] with w[Co,Ci,kh,kw].

    Returns (y, ctx): ctx carries what the weight gradient needs -- the
    padded input on the direct-kernel path, the column matrix on the GEMM
    path, or None when need_ctx is false on the direct path.
    """
    co, ci, kh, kw = w.shape
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    ho = (x.shape[2] + 2 * ph - kh) // stride + 1
    wo = (x.shape[3] + 2 * pw - kw) // stride + 1
    # direct kernels keep planes cache-resident and win at larger spatial
    # extents; the GEMM path amortizes better once rows get short.
    if direct_path_available(x.dtype, stride) and wo >= 16:
        xp = _pad_contig(x, ph, pw)
        n = xp.shape[0]
        y = np.empty((n, co, ho, wo), dtype=np.float32)
        bias = b if b is not None else np.zeros(co, np.float32)
        run_fwd(xp, np.ascontiguousarray(w), np.ascontiguousarray(bias), y, stride)
        if need_ctx:
            return y, ("xp", xp, stride)
        return y, None
    y, x_col, _, _ = _corr2d_gemm(x, w, b, stride, padding)
    return y, ("col", x_col, stride)


def _conv_dw(ctx, g: np.ndarray, wshape) -> np.ndarray:
    kind, saved, stride = ctx
    co, ci, kh, kw = wshape
    if kind == "xp":
        # small output maps favor the GEMM formulation; rebuild the column
        # matrix from the saved padded input
        if g.shape[3] < 32:
            n, _, hp, wp = saved.shape
            ho = (hp - kh) // stride + 1
            wo = (wp - kw) // stride + 1
            col = np.empty((ci * kh * kw, n * ho * wo), dtype=saved.dtype)
            gather_windows(saved, col, kh, kw, stride, ho, wo)
            return _corr2d_weight_grad(col, g, wshape)
        dw = np.empty(wshape, dtype=np.float32)
        run_dw(saved, np.ascontiguousarray(g), dw, stride)
        return dw
    return _corr2d_weight_grad(saved, g, wshape)


def _dilate_pad(x: np.ndarray, stride: int, ph: int, pw: int) -> np.ndarray:
    """Insert stride-1 zeros between spatial elements and zero-pad edges."""
    if stride == 1 and not ph and not pw:
        return np.ascontiguousarray(x)
    n, c, h, w = x.shape
    hd, wd = (h - 1) * stride + 1, (w - 1) * stride + 1
    out = np.zeros((n, c, hd + 2 * ph, wd + 2 * pw), dtype=x.dtype)
    out[:, :, ph:ph + hd:stride, pw:pw + wd:stride] = x
    return out


def _corr2d_input_adjoint(gy: np.ndarray, w: np.ndarray, stride: int, padding: int,
                          out_hw: tuple[int, int]) -> np.ndarray:
    """Adjoint of _corr2d with respect to its input.

    Maps gy[N,Co,Ho,Wo] back to [N,Ci,H,W]: dilate by stride, then stride-1
    correlate with the flipped kernel, channels swapped. Positions the
    forward never touched (stride remainders) receive zeros.
    """
    co, ci, kh, kw = w.shape
    h, w_ = out_hw
    if adjoint_fast_path(gy.dtype, stride, kh, kw, padding,
                         gy.shape[2], gy.shape[3], out_hw):
        return phase_adjoint_s2k4(np.ascontiguousarray(gy), w, out_hw)
    w_flip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    rem_h = (h + 2 * padding - kh) % stride
    rem_w = (w_ + 2 * padding - kw) % stride
    ph, pw = kh - 1 - padding, kw - 1 - padding
    if ph >= 0 and pw >= 0 and rem_h == 0 and rem_w == 0:
        g_dil = _dilate_pad(gy, stride, ph, pw)
        gx, _ = _corr2d(g_dil, w_flip, None, 1, 0)
    else:
        # stride remainders make the support asymmetric (the forward's last
        # windows still reach real rows past the symmetric crop), and large
        # padding needs cropping; correlate at full overlap and slice
        g_dil = _dilate_pad(gy, stride, kh - 1, kw - 1)
        gx, _ = _corr2d(g_dil, w_flip, None, 1, 0)
        gx = gx[:, :, padding:, padding:]
    gh, gw = gx.shape[2], gx.shape[3]
    if gh < h or gw < w_:
        gx = np.pad(gx, ((0, 0), (0, 0), (0, max(0, h - gh)), (0, max(0, w_ - gw))))
    return gx[:, :, :h, :w_]


# ---------------------------------------------------------------------------
# differentiable layers
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Strided 2-D cross-correlation plus per-channel bias.

    x: [N,Cin,H,W], weight: [Cout,Cin,kh,kw], bias: [Cout].
    Output spatial extent: floor((H + 2*padding - kh)/stride) + 1.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input/weight, got {x.shape}/{weight.shape}")
    n, ci, h, w_ = x.shape
    co, wci, kh, kw = weight.shape
    if ci != wci:
        raise ShapeError(f"conv2d channel mismatch: input has {ci}, weight expects {wci}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if kh > h + 2 * padding or kw > w_ + 2 * padding:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w_ + 2 * padding}")
    record = grad_enabled() and any(t.requires_grad for t in (x, weight, bias))
    y, ctx = _corr2d(x.data, weight.data, bias.data, stride, padding,
                     need_ctx=record and weight.requires_grad)
    if not record:
        return Tensor(y)
    xs, ws, bs = x, weight, bias
    wshape = weight.shape
    in_hw = (h, w_)

    def backward(g):
        g = np.ascontiguousarray(g)
        if ws.requires_grad:
            ws._accumulate_owned(_conv_dw(ctx, g, wshape))
        if bs.requires_grad:
            bs._accumulate_owned(g.sum(axis=(0, 2, 3)))
        if xs.requires_grad:
            xs._accumulate_owned(_corr2d_input_adjoint(g, ws.data, stride, padding, in_hw))

    return Tensor.from_op(y, (xs, ws, bs), "conv2d", backward)


def conv2d_transpose(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Fractionally-strided convolution: the adjoint of conv2d.

    x: [N,Cin,H,W], weight: [Cin,Cout,kh,kw], bias: [Cout].
    Output spatial extent: (H - 1)*stride - 2*padding + kh.
    """
    n, ci, h, w_ = x.shape
    wci, co, kh, kw = weight.shape
    if ci != wci:
        raise ShapeError(
            f"conv2d_transpose channel mismatch: input has {ci}, weight expects {wci}")
    hh = (h - 1) * stride - 2 * padding + kh
    ww = (w_ - 1) * stride - 2 * padding + kw
    if hh <= 0 or ww <= 0:
        raise ShapeError(f"conv2d_transpose output extent {hh}x{ww} not positive")
    # weight buffer read as a conv kernel [Co=Cin, Ci=Cout]: x plays the role
    # of the conv output gradient in the adjoint.
    y = _corr2d_input_adjoint(x.data, weight.data, stride, padding, (hh, ww))
    if bias is not None:
        y += bias.data[None, :, None, None]
    record = grad_enabled() and any(t.requires_grad for t in (x, weight, bias))
    if not record:
        return Tensor(y)
    xs, ws, bs = x, weight, bias

    def backward(g):
        g = np.ascontiguousarray(g)
        if xs.requires_grad:
            gx, _ = _corr2d(g, ws.data, None, stride, padding)
            xs._accumulate_owned(gx)
        if ws.requires_grad:
            # weight grad via the conv identity with (input=g, output-grad=x)
            if direct_path_available(g.dtype, stride):
                gp = _pad_contig(g, padding, padding)
                dw = np.empty((ci, co, kh, kw), dtype=np.float32)
                run_dw(gp, np.ascontiguousarray(xs.data), dw, stride)
                ws._accumulate_owned(dw)
            else:
                g_col, _, _ = _im2col(g, kh, kw, stride, padding)
                x2d = xs.data.transpose(1, 0, 2, 3).reshape(ci, -1)
                ws._accumulate_owned((x2d @ g_col.T).reshape(ci, co, kh, kw))
        if bs.requires_grad:
            bs._accumulate_owned(g.sum(axis=(0, 2, 3)))

    return Tensor.from_op(y, (xs, ws, bs), "conv2d_transpose", backward)


def maxpool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pooling; H and W must be even.

    Backward routes each window's gradient to its first (row-major) maximum.
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial extents, got {h}x{w}")
    y, idx = pool2x2_fwd(np.ascontiguousarray(x.data))
    if not x.requires_grad:
        return Tensor(y)
    xs = x

    def backward(g):
        xs._accumulate_owned(pool2x2_bwd(np.ascontiguousarray(g), idx, h, w))

    return Tensor.from_op(y, (xs,), "maxpool2x2", backward)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0)
    if not x.requires_grad:
        return Tensor(y)
    xs = x
    mask = x.data > 0

    def backward(g):
        xs._accumulate_owned(g * mask)

    return Tensor.from_op(y, (xs,), "relu", backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    y = np.where(x.data > 0, x.data, x.data * x.data.dtype.type(slope))
    if not x.requires_grad:
        return Tensor(y)
    xs = x
    scale = np.where(x.data > 0, x.data.dtype.type(1), x.data.dtype.type(slope))

    def backward(g):
        xs._accumulate_owned(g * scale)

    return Tensor.from_op(y, (xs,), "leaky_relu", backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    if not x.requires_grad:
        return Tensor(y)
    xs = x

    def backward(g):
        xs._accumulate_owned(g * (1 - y * y))

    return Tensor.from_op(y, (xs,), "tanh", backward)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function 1/(1 + e^-x), computed stably on both tails."""
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)
    if not x.requires_grad:
        return Tensor(y)
    xs = x

    def backward(g):
        xs._accumulate_owned(g * y * (1 - y))

    return Tensor.from_op(y, (xs,), "sigmoid", backward)


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def apply_activation(x: Tensor, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map y = x @ weight + bias for x[N,K], weight[K,M], bias[M]."""
    n, k = x.shape
    wk, m = weight.shape
    if k != wk:
        raise ShapeError(f"dense inner extents disagree: input {k}, weight {wk}")
    y = x.data @ weight.data + bias.data
    record = any(t.requires_grad for t in (x, weight, bias))
    if not record:
        return Tensor(y)
    xs, ws, bs = x, weight, bias

    def backward(g):
        if xs.requires_grad:
            xs._accumulate_owned(g @ ws.data.T)
        if ws.requires_grad:
            ws._accumulate_owned(xs.data.T @ g)
        if bs.requires_grad:
            bs._accumulate_owned(g.sum(axis=0))

    return Tensor.from_op(y, (xs, ws, bs), "dense", backward)


def softmax(x: Tensor) -> Tensor:
    """Row-wise normalized exponential with max subtraction, x[N,C] -> [N,C]."""
    z = x.data.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p64 = e / e.sum(axis=1, keepdims=True)
    p = p64.astype(x.data.dtype)
    if not x.requires_grad:
        return Tensor(p)
    xs = x

    def backward(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        xs._accumulate_owned(p * (g - dot))

    return Tensor.from_op(p, (xs,), "softmax", backward)


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log-probability of the true class.

    Probabilities are floored at 1e-12 so a zero on the true class yields a
    finite loss; rows are expected to be normalized already.
    """
    labels = np.asarray(labels)
    n, c = probs.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    row_sums = probs.data.sum(axis=1, dtype=np.float64)
    if np.abs(row_sums - 1.0).max() > 1e-3:
        raise ValueError("cross_entropy expects row-normalized probabilities")
    picked = probs.data[np.arange(n), labels].astype(np.float64)
    clamped = np.maximum(picked, PROB_FLOOR)
    loss = np.asarray(-np.log(clamped).mean(), dtype=probs.data.dtype)
    if not probs.requires_grad:
        return Tensor(loss)
    ps = probs

    def backward(g):
        gp = np.zeros_like(ps.data)
        # d(-log(max(p, floor)))/dp is zero in the clamped (flat) region
        live = picked >= PROB_FLOOR
        rows = np.arange(n)[live]
        gp[rows, labels[live]] = (-1.0 / (n * clamped[live])) * float(g)
        ps._accumulate(gp)

    return Tensor.from_op(loss, (ps,), "cross_entropy", backward)


def log_clamped(x: Tensor, floor: float = PROB_FLOOR) -> Tensor:
    """Elementwise log with the argument floored at ``floor`` (flat below it)."""
    clamped = np.maximum(x.data, floor)
    y = np.log(clamped).astype(x.data.dtype)
    if not x.requires_grad:
        return Tensor(y)
    xs = x
    live = x.data >= floor

    def backward(g):
        xs._accumulate(np.where(live, g / clamped, 0).astype(xs.data.dtype))

    return Tensor.from_op(y, (xs,), "log_clamped", backward)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Per-channel running statistics for eval-mode normalization."""

    num_channels: int
    momentum: float = 0.9
    eps: float = 1e-5
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros(self.num_channels, dtype=np.float64)
        if self.running_var is None:
            self.running_var = np.ones(self.num_channels, dtype=np.float64)

    def update(self, mean: np.ndarray, var: np.ndarray):
        m = self.momentum
        self.running_mean = m * self.running_mean + (1 - m) * mean
        self.running_var = m * self.running_var + (1 - m) * var


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                training: bool) -> Tensor:
    """Per-channel normalization of x[N,C,H,W] followed by scale and shift.

    Train mode normalizes with batch statistics (and folds them into the
    running averages); eval mode uses the running statistics. Train mode
    requires at least two values per channel.
    """
    n, c, h, w = x.shape
    if training and n * h * w < 2:
        raise ShapeError("batchnorm2d train mode needs N*H*W >= 2 per channel")
    x64 = x.data
    if training:
        mean = x64.mean(axis=(0, 2, 3), dtype=np.float64)
        var = x64.var(axis=(0, 2, 3), dtype=np.float64)
        state.update(mean, var)
    else:
        mean, var = state.running_mean, state.running_var
    inv = (1.0 / np.sqrt(var + state.eps)).astype(x.data.dtype)
    mean_c = mean.astype(x.data.dtype)
    xhat = (x.data - mean_c[None, :, None, None]) * inv[None, :, None, None]
    y = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    record = any(t.requires_grad for t in (x, gamma, beta))
    if not record:
        return Tensor(y)
    xs, gs, bs = x, gamma, beta
    m = n * h * w

    def backward(g):
        if gs.requires_grad:
            gs._accumulate_owned((g * xhat).sum(axis=(0, 2, 3)))
        if bs.requires_grad:
            bs._accumulate_owned(g.sum(axis=(0, 2, 3)))
        if xs.requires_grad:
            coeff = (gs.data * inv)[None, :, None, None]
            if training:
                g_sum = g.sum(axis=(0, 2, 3), keepdims=True)
                gx_sum = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
                xs._accumulate_owned(coeff * (g - g_sum / m - xhat * gx_sum / m))
            else:
                xs._accumulate_owned(coeff * g)

    return Tensor.from_op(y, (xs, gs, bs), "batchnorm2d", backward)
