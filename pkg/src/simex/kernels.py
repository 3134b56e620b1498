"""Hot inner loops for convolution and pooling.

Every kernel has two implementations with identical signatures: direct loops
compiled with numba (``numba_kernels``) and a vectorized numpy version built on
im2col + BLAS (``numpy_kernels``). The module-level names point at whichever
:data:`simex._accel.USE_NUMBA` selects.

Layouts are NCHW. Convolution kernels take an already padded input ``xp`` and
return an opaque context that the matching backward kernel consumes.
"""
from __future__ import annotations

from types import SimpleNamespace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import NUMBA_AVAILABLE, USE_NUMBA, njit  # NUMBA_AVAILABLE is re-exported


# ---------------------------------------------------------------- numpy path

def _im2col_np(xp, kh, kw):
    n, c, hp, wp = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # n, c, ho, wo, kh, kw
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def _col2im_np(cols, n, c, hp, wp, kh, kw):
    ho, wo = hp - kh + 1, wp - kw + 1
    cols = cols.reshape(n, ho, wo, c, kh, kw)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + ho, j:j + wo] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def _maxpool2_np(x):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(blocks, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, arg


def _maxpool2_back_np(grad, arg):
    n, c, h2, w2 = grad.shape
    blocks = np.zeros((n, c, h2, w2, 4), dtype=grad.dtype)
    np.put_along_axis(blocks, arg[..., None].astype(np.intp), grad[..., None], axis=-1)
    return blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)


def _conv_fwd_np(xp, w, b):
    n, c, hp, wp = xp.shape
    o, _, kh, kw = w.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    cols = _im2col_np(xp, kh, kw)
    out = cols @ w.reshape(o, -1).T + b
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))
    return out, (cols, xp.shape)


def _conv_bwd_np(ctx, w, grad):
    cols, (n, c, hp, wp) = ctx
    o, _, kh, kw = w.shape
    g2 = grad.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (g2.T @ cols).reshape(w.shape)
    db = g2.sum(axis=0)
    dxp = _col2im_np(g2 @ w.reshape(o, -1), n, c, hp, wp, kh, kw)
    return dxp, dw, db


def _conv_infer_np(xp, w, b):
    return _conv_fwd_np(xp, w, b)[0]


numpy_kernels = SimpleNamespace(
    conv2d_forward=_conv_fwd_np, conv2d_backward=_conv_bwd_np,
    conv2d_infer=_conv_infer_np,
    maxpool2=_maxpool2_np, maxpool2_back=_maxpool2_back_np,
)


# ---------------------------------------------------------------- numba path

@njit
def _conv_fwd_nb(xp, w, b):
    n, c, hp, wp = xp.shape
    o, _, kh, kw = w.shape
    ho = hp - kh + 1
    wo = wp - kw + 1
    out = np.empty((n, o, ho, wo), dtype=xp.dtype)
    for bi in range(n):
        for oc in range(o):
            acc = out[bi, oc]
            acc[:, :] = b[oc]
            for ch in range(c):
                src = xp[bi, ch]
                for i in range(kh):
                    for j in range(kw):
                        wv = w[oc, ch, i, j]
                        for y in range(ho):
                            for x in range(wo):
                                acc[y, x] += wv * src[y + i, x + j]
    return out


@njit
def _conv_dx_nb(w, g, hp, wp):
    n, o, ho, wo = g.shape
    _, c, kh, kw = w.shape
    dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
    for bi in range(n):
        for oc in range(o):
            gg = g[bi, oc]
            for ch in range(c):
                dst = dxp[bi, ch]
                for i in range(kh):
                    for j in range(kw):
                        wv = w[oc, ch, i, j]
                        for y in range(ho):
                            for x in range(wo):
                                dst[y + i, x + j] += wv * gg[y, x]
    return dxp


@njit(fastmath=True)
def _conv_dw_nb(xp, g, kh, kw):
    # float64 accumulators; fastmath lets LLVM vectorize the reduction
    n, c, hp, wp = xp.shape
    o = g.shape[1]
    ho = g.shape[2]
    wo = g.shape[3]
    dw = np.zeros((o, c, kh, kw), dtype=np.float64)
    db = np.zeros(o, dtype=np.float64)
    for bi in range(n):
        for oc in range(o):
            gg = g[bi, oc]
            s = 0.0
            for y in range(ho):
                for x in range(wo):
                    s += gg[y, x]
            db[oc] += s
            for ch in range(c):
                src = xp[bi, ch]
                for i in range(kh):
                    for j in range(kw):
                        s = 0.0
                        for y in range(ho):
                            for x in range(wo):
                                s += gg[y, x] * src[y + i, x + j]
                        dw[oc, ch, i, j] += s
    return dw, db


@njit
def _maxpool2_nb(x):
    n, c, h, w = x.shape
    h2 = h // 2
    w2 = w // 2
    out = np.empty((n, c, h2, w2), dtype=x.dtype)
    arg = np.empty((n, c, h2, w2), dtype=np.int8)
    for b in range(n):
        for ch in range(c):
            for y in range(h2):
                for xx in range(w2):
                    best = x[b, ch, 2 * y, 2 * xx]
                    where = 0
                    for q in range(1, 4):
                        v = x[b, ch, 2 * y + q // 2, 2 * xx + q % 2]
                        if v > best:
                            best = v
                            where = q
                    out[b, ch, y, xx] = best
                    arg[b, ch, y, xx] = where
    return out, arg


@njit
def _maxpool2_back_nb(grad, arg):
    n, c, h2, w2 = grad.shape
    out = np.zeros((n, c, 2 * h2, 2 * w2), dtype=grad.dtype)
    for b in range(n):
        for ch in range(c):
            for y in range(h2):
                for xx in range(w2):
                    q = arg[b, ch, y, xx]
                    out[b, ch, 2 * y + q // 2, 2 * xx + q % 2] = grad[b, ch, y, xx]
    return out


# Direct loops lose to BLAS once there are many output channels to share each
# input window; those layers go through im2col + GEMM instead.
GEMM_MIN_OUT_CHANNELS = 16


def _conv_fwd_nb_entry(xp, w, b):
    if w.shape[0] >= GEMM_MIN_OUT_CHANNELS:
        out, ctx = _conv_fwd_np(xp, w, b)
        return out, ("gemm", ctx)
    xp = np.ascontiguousarray(xp)
    return _conv_fwd_nb(xp, np.ascontiguousarray(w), b), ("direct", xp)


def _conv_bwd_nb_entry(ctx, w, grad):
    route, ctx = ctx
    if route == "gemm":
        return _conv_bwd_np(ctx, w, grad)
    xp = ctx
    grad = np.ascontiguousarray(grad)
    kh, kw = w.shape[2], w.shape[3]
    dxp = _conv_dx_nb(np.ascontiguousarray(w), grad, xp.shape[2], xp.shape[3])
    dw, db = _conv_dw_nb(xp, grad, kh, kw)
    return dxp, dw.astype(w.dtype), db.astype(w.dtype)


# Forward-only (inference) calls have no backward to amortize, and there BLAS
# already wins once each output reads a long enough input window.
GEMM_MIN_INFER_WINDOW = 128


def _conv_infer_nb_entry(xp, w, b):
    if w.shape[0] >= GEMM_MIN_OUT_CHANNELS or w.shape[1] * w.shape[2] * w.shape[3] >= GEMM_MIN_INFER_WINDOW:
        return _conv_fwd_np(xp, w, b)[0]
    return _conv_fwd_nb(np.ascontiguousarray(xp), np.ascontiguousarray(w), b)


def _maxpool2_nb_entry(x):
    return _maxpool2_nb(np.ascontiguousarray(x))


def _maxpool2_back_nb_entry(grad, arg):
    return _maxpool2_back_nb(np.ascontiguousarray(grad), np.ascontiguousarray(arg))


numba_kernels = SimpleNamespace(
    conv2d_forward=_conv_fwd_nb_entry, conv2d_backward=_conv_bwd_nb_entry,
    conv2d_infer=_conv_infer_nb_entry,
    maxpool2=_maxpool2_nb_entry, maxpool2_back=_maxpool2_back_nb_entry,
)

active = numba_kernels if USE_NUMBA else numpy_kernels
BACKEND = "numba" if USE_NUMBA else "numpy"

conv2d_forward = active.conv2d_forward
conv2d_backward = active.conv2d_backward
conv2d_infer = active.conv2d_infer
maxpool2 = active.maxpool2
maxpool2_back = active.maxpool2_back
