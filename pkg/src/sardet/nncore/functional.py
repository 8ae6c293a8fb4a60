"""Forward/backward kernels.

Kernels with an ``_nhwc`` suffix work on channel-last arrays, which is what
the model uses internally; the un-suffixed wrappers take and return N-C-H-W
tensors. Every ``*_forward`` returns ``(out, cache)`` and the matching
``*_backward`` consumes that cache. Kernels are dtype-generic: float32 in
normal use, float64 for finite-difference checks.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, StateError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _check_conv(x_shape, w_shape, stride, padding):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ShapeError(f"conv2d needs 4-D input and weight, got {x_shape} and {w_shape}")
    if x_shape[3] != w_shape[1]:
        raise ShapeError(f"input channels {x_shape[3]} (input shape {x_shape}, NHWC) "
                         f"do not match weight shape {w_shape}")
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    k = w_shape[2]
    ho = (x_shape[1] + 2 * padding - k) // stride + 1
    wo = (x_shape[2] + 2 * padding - w_shape[3]) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {x_shape} too small for kernel {w_shape}")
    return ho, wo


# ---------------------------------------------------------------- convolution

def conv2d_forward_nhwc(x, w, b=None, stride=1, padding=None):
    """Cross-correlation of ``x`` (N, H, W, C) with ``w`` (F, C, kh, kw)."""
    k = w.shape[2]
    if padding is None:
        padding = k // 2
    ho, wo = _check_conv(x.shape, w.shape, stride, padding)
    if k == 1 and padding == 0:
        out, cache = _conv1x1_fwd(x, w, stride)
    elif stride == 1 and w.shape[2] == w.shape[3] and 2 * padding == k - 1:
        out, cache = _conv_flat_fwd(x, w, padding)
    elif stride == 2 and x.shape[3] <= 4 and w.shape[2] == w.shape[3]:
        out, cache = _conv_s2d_fwd(x, w, padding, ho, wo)
    else:
        out, cache = _conv_cols_fwd(x, w, stride, padding, ho, wo)
    if b is not None:
        out += b.astype(out.dtype, copy=False)
    return out, cache + (b is not None,)


def conv2d_backward_nhwc(dy, cache, need_dx=True):
    """Returns ``(dx, dw, db)``; ``db`` is None for bias-free convolutions and
    ``dx`` is None when ``need_dx`` is false (only the s2d path skips the
    work, it is the only one where it matters)."""
    kind = cache[0]
    has_bias = cache[-1]
    cache = cache[:-1]
    if kind == "1x1":
        dx, dw = _conv1x1_bwd(dy, cache)
    elif kind == "flat":
        dx, dw = _conv_flat_bwd(dy, cache)
    elif kind == "s2d":
        dx, dw = _conv_s2d_bwd(dy, cache, need_dx)
    else:
        dx, dw = _conv_cols_bwd(dy, cache)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0) if has_bias else None
    return (dx if need_dx else None), dw, db


def _conv1x1_fwd(x, w, stride):
    xs = x[:, ::stride, ::stride, :] if stride > 1 else x
    n, ho, wo, c = xs.shape
    cols = np.ascontiguousarray(xs).reshape(-1, c)
    wmat = np.ascontiguousarray(w[:, :, 0, 0].T)
    out = (cols @ wmat).reshape(n, ho, wo, -1)
    return out, ("1x1", x.shape, stride, cols, w)


def _conv1x1_bwd(dy, cache):
    _, x_shape, stride, cols, w = cache
    dyf = dy.reshape(-1, dy.shape[-1])
    dw = (dyf.T @ cols)[:, :, None, None]
    dxs = dyf @ w[:, :, 0, 0]
    if stride == 1:
        return dxs.reshape(x_shape), dw
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, ::stride, ::stride, :] = dxs.reshape(dy.shape[:3] + (x_shape[3],))
    return dx, dw


def _conv_flat_fwd(x, w, p):
    # Stride-1 "same" convolution on the flattened padded image: output
    # position q reads input q + i*Wp + j, a contiguous slice per kernel tap.
    # Positions that fall in the padding are computed and discarded.
    n, h, wd, c = x.shape
    f, _, k, _ = w.shape
    hp, wp = h + 2 * p, wd + 2 * p
    total = n * hp * wp
    slack = (k - 1) * wp + (k - 1)
    xp = np.zeros((total + slack, c), dtype=x.dtype)
    xp[:total].reshape(n, hp, wp, c)[:, p:p + h, p:p + wd] = x
    wt = np.ascontiguousarray(w.transpose(2, 3, 1, 0)).astype(x.dtype, copy=False)
    out = np.zeros((total, f), dtype=x.dtype)
    tmp = np.empty_like(out)
    for i in range(k):
        for j in range(k):
            off = i * wp + j
            np.matmul(xp[off:off + total], wt[i, j], out=tmp)
            out += tmp
    y = out.reshape(n, hp, wp, f)[:, :h, :wd]
    return np.ascontiguousarray(y), ("flat", x.shape, p, xp, wt)


def _conv_flat_bwd(dy, cache):
    _, x_shape, p, xp, wt = cache
    n, h, wd, c = x_shape
    k = wt.shape[0]
    f = wt.shape[3]
    hp, wp = h + 2 * p, wd + 2 * p
    total = n * hp * wp
    dyp = np.zeros((total, f), dtype=dy.dtype)
    dyp.reshape(n, hp, wp, f)[:, :h, :wd] = dy
    dxp = np.zeros_like(xp)
    dwt = np.empty((k, k, c, f), dtype=dy.dtype)
    tmp = np.empty((total, c), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            off = i * wp + j
            np.matmul(xp[off:off + total].T, dyp, out=dwt[i, j])
            np.matmul(dyp, wt[i, j].T, out=tmp)
            dxp[off:off + total] += tmp
    dx = dxp[:total].reshape(n, hp, wp, c)[:, p:p + h, p:p + wd]
    return np.ascontiguousarray(dx), dwt.transpose(3, 2, 0, 1)


def _conv_cols_fwd(x, w, stride, p, ho, wo):
    n, h, wd, c = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    cols = cols.reshape(n * ho * wo, -1)
    wmat = np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(-1, f)).astype(x.dtype, copy=False)
    out = (cols @ wmat).reshape(n, ho, wo, f)
    return out, ("cols", x.shape, stride, p, cols, wmat, (kh, kw))


def _conv_cols_bwd(dy, cache):
    _, x_shape, stride, p, cols, wmat, (kh, kw) = cache
    n, h, wd, c = x_shape
    _, ho, wo, f = dy.shape
    dyf = dy.reshape(-1, f)
    dw = (cols.T @ dyf).reshape(kh, kw, c, f).transpose(3, 2, 0, 1)
    dcols = (dyf @ wmat.T).reshape(n, ho, wo, kh, kw, c)
    dxp = np.zeros((n, h + 2 * p, wd + 2 * p, c), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, p:p + h, p:p + wd, :] if p else dxp
    return np.ascontiguousarray(dx), dw


def _conv_s2d_fwd(x, w, p, ho, wo):
    # Stride-2 convolution on few channels (the stem): fold each 2x2 pixel
    # block into channels so the im2col copies move 4x wider chunks, then run
    # a stride-1 valid convolution with a ceil(k/2) kernel.
    n, h, wd, c = x.shape
    f, _, k, _ = w.shape
    k2 = (k + 1) // 2
    hs, ws = ho + k2 - 1, wo + k2 - 1
    xp = np.zeros((n, 2 * hs, 2 * ws, c), dtype=x.dtype)
    hh, ww = min(h, 2 * hs - p), min(wd, 2 * ws - p)
    xp[:, p:p + hh, p:p + ww] = x[:, :hh, :ww]
    xs = xp.reshape(n, hs, 2, ws, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, hs, ws, 4 * c)
    cols = np.empty((n, ho, wo, k2, k2, 4 * c), dtype=x.dtype)
    for a in range(k2):
        for b in range(k2):
            cols[:, :, :, a, b, :] = xs[:, a:a + ho, b:b + wo, :]
    cols = cols.reshape(n * ho * wo, -1)
    w8 = np.zeros((f, c, 2 * k2, 2 * k2), dtype=x.dtype)
    w8[:, :, :k, :k] = w
    # (a, b, di, dj, c) ordering to match cols
    wmat = np.ascontiguousarray(
        w8.reshape(f, c, k2, 2, k2, 2).transpose(2, 4, 3, 5, 1, 0).reshape(-1, f))
    out = (cols @ wmat).reshape(n, ho, wo, f)
    return out, ("s2d", x.shape, p, cols, wmat, k, (hs, ws, hh, ww))


def _conv_s2d_bwd(dy, cache, need_dx=True):
    _, x_shape, p, cols, wmat, k, (hs, ws, hh, ww) = cache
    n, h, wd, c = x_shape
    _, ho, wo, f = dy.shape
    k2 = (k + 1) // 2
    dyf = dy.reshape(-1, f)
    dw8 = (cols.T @ dyf).reshape(k2, k2, 2, 2, c, f).transpose(5, 4, 0, 2, 1, 3)
    dw = np.ascontiguousarray(dw8.reshape(f, c, 2 * k2, 2 * k2)[:, :, :k, :k])
    if not need_dx:
        return None, dw
    dcols = (dyf @ wmat.T).reshape(n, ho, wo, k2, k2, 4 * c)
    dxs = np.zeros((n, hs, ws, 4 * c), dtype=dy.dtype)
    for a in range(k2):
        for b in range(k2):
            dxs[:, a:a + ho, b:b + wo, :] += dcols[:, :, :, a, b, :]
    dxp = dxs.reshape(n, hs, ws, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, 2 * hs, 2 * ws, c)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :hh, :ww] = dxp[:, p:p + hh, p:p + ww]
    return dx, dw


# ---------------------------------------------------------------- batch norm

def batchnorm_forward_nhwc(x, gamma, beta, running_mean, running_var, train, tracked=True):
    """Batch normalisation over every axis but the last.

    In train mode the running statistics are updated in place (momentum 0.1,
    unbiased variance) and the batch statistics normalise the output.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm parameters {gamma.shape}/{beta.shape} do not match "
                         f"{c} channels of input {x.shape}")
    xf = x.reshape(-1, c)
    if train:
        m = xf.shape[0]
        mean = xf.mean(axis=0)
        centred = xf - mean
        var = np.einsum("ij,ij->j", centred, centred) / m
        running_mean *= 1 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var * (m / max(m - 1, 1))
        invstd = 1.0 / np.sqrt(var + BN_EPS)
        xhat = centred
        xhat *= invstd
    else:
        if not tracked:
            raise StateError("batchnorm eval mode before any running statistics were recorded")
        invstd = (1.0 / np.sqrt(running_var + BN_EPS)).astype(x.dtype)
        xhat = (xf - running_mean.astype(x.dtype)) * invstd
    y = xhat * gamma.astype(x.dtype) + beta.astype(x.dtype)
    return y.reshape(x.shape), (xhat if train else None, invstd, gamma, train)


def batchnorm_backward_nhwc(dy, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, invstd, gamma, train = cache
    c = dy.shape[-1]
    dyf = dy.reshape(-1, c)
    dbeta = dyf.sum(axis=0)
    if not train:
        raise StateError("batchnorm backward needs a train-mode forward")
    dgamma = np.einsum("ij,ij->j", dyf, xhat)
    m = dyf.shape[0]
    dx = dyf - dbeta / m
    dx -= xhat * (dgamma / m)
    dx *= gamma * invstd
    return dx.reshape(dy.shape), dgamma, dbeta


# ---------------------------------------------------------------- pointwise / pooling

def relu_forward(x):
    out = np.maximum(x, 0)
    return out, out > 0


def relu_backward(dy, mask):
    return dy * mask


def maxpool_forward_nhwc(x, k=3, stride=2, padding=1):
    n, h, w, c = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)),
                constant_values=-np.inf) if padding else x
    out = xp[:, 0:stride * ho:stride, 0:stride * wo:stride, :].copy()
    for i in range(k):
        for j in range(k):
            if i or j:
                np.maximum(out, xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :], out=out)
    return out, (xp, out, x.shape, k, stride, padding)


def maxpool_backward_nhwc(dy, cache):
    # gradient goes to the first window position (raster order) holding the max
    xp, out, x_shape, k, stride, padding = cache
    n, h, w, c = x_shape
    _, ho, wo, _ = dy.shape
    dxp = np.zeros(xp.shape, dtype=dy.dtype)
    free = np.ones(out.shape, dtype=bool)
    for i in range(k):
        for j in range(k):
            win = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
            hit = (win == out) & free
            free &= ~hit
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dy * hit
    return dxp[:, padding:padding + h, padding:padding + w, :]


# ---------------------------------------------------------------- N-C-H-W wrappers

def to_nhwc(x):
    return np.ascontiguousarray(np.asarray(x).transpose(0, 2, 3, 1))


def to_nchw(x):
    return np.ascontiguousarray(np.asarray(x).transpose(0, 3, 1, 2))


def conv2d_forward(x, weights, stride=1, padding=None, bias=None):
    """N-C-H-W convolution; output H, W = floor((H + 2p - k) / s) + 1."""
    x = np.asarray(x)
    if x.ndim != 4 or np.ndim(weights) != 4 or x.shape[1] != weights.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape} vs weight {np.shape(weights)}")
    out, cache = conv2d_forward_nhwc(to_nhwc(x), weights, bias, stride, padding)
    return to_nchw(out), cache


def conv2d_backward(dy, cache):
    dx, dw, db = conv2d_backward_nhwc(to_nhwc(dy), cache)
    return to_nchw(dx), dw, db


def batchnorm_forward(x, gamma, beta, running_stats, mode="train"):
    """N-C-H-W batch norm. ``running_stats`` is a ``(mean, var)`` pair that is
    updated in place in train mode; pass None in eval mode to get the
    missing-statistics error."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    c = np.shape(x)[1]
    if running_stats is None:
        if mode == "eval":
            raise StateError("batchnorm eval mode before any running statistics were recorded")
        running_stats = (np.zeros(c, dtype=np.float64), np.ones(c, dtype=np.float64))
    mean, var = running_stats
    out, cache = batchnorm_forward_nhwc(to_nhwc(x), gamma, beta, mean, var, mode == "train")
    return to_nchw(out), cache


def batchnorm_backward(dy, cache):
    dx, dg, db = batchnorm_backward_nhwc(to_nhwc(dy), cache)
    return to_nchw(dx), dg, db
