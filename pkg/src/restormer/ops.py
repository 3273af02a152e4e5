"""Differentiable operations on NHWC activations.

Weight layouts: convolution kernels are ``[k, k, Cin // groups, Cout]``;
LayerNorm scale/shift are ``[C]``.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy.special import erf

from .errors import ConfigError, DimensionError
from .tensor import Tensor, record, unbroadcast

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    """Stack the k*k shifted windows along the channel axis, (dy, dx, c) order."""
    return np.concatenate(
        [xp[:, dy:dy + h, dx:dx + w, :] for dy in range(k) for dx in range(k)], axis=-1
    )


def _conv_dense(x: np.ndarray, w: np.ndarray, pad: int):
    n, h, wd, cin = x.shape
    k, cout = w.shape[0], w.shape[3]
    if k == 1:
        cols = x
    else:
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        cols = _im2col(xp, k, h, wd)
    out = cols.reshape(-1, k * k * cin) @ w.reshape(k * k * cin, cout)
    return out.reshape(n, h, wd, cout), cols


def _conv_dense_backward(g, x, w, cols, pad, need_x=True):
    n, h, wd, cin = x.shape
    k, cout = w.shape[0], w.shape[3]
    g2 = g.reshape(-1, cout)
    gw = (cols.reshape(-1, k * k * cin).T @ g2).reshape(w.shape)
    if not need_x:
        return None, gw
    gcols = (g2 @ w.reshape(k * k * cin, cout).T).reshape(n, h, wd, k * k * cin)
    if k == 1:
        return gcols, gw
    gxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, cin), dtype=g.dtype)
    i = 0
    for dy in range(k):
        for dx in range(k):
            gxp[:, dy:dy + h, dx:dx + wd, :] += gcols[..., i * cin:(i + 1) * cin]
            i += 1
    return gxp[:, pad:pad + h, pad:pad + wd, :], gw


@njit(cache=True)
def _dw_forward_kernel(xp, w, out):
    n, h, wd, c = out.shape
    k = w.shape[0]
    for b in range(n):
        for i in range(h):
            for j in range(wd):
                for dy in range(k):
                    for dx in range(k):
                        for ch in range(c):
                            out[b, i, j, ch] += xp[b, i + dy, j + dx, ch] * w[dy, dx, 0, ch]


@njit(cache=True)
def _dw_backward_kernel(g, xp, w, gxp, gw):
    n, h, wd, c = g.shape
    k = w.shape[0]
    for b in range(n):
        for i in range(h):
            for j in range(wd):
                for dy in range(k):
                    for dx in range(k):
                        for ch in range(c):
                            gv = g[b, i, j, ch]
                            gxp[b, i + dy, j + dx, ch] += gv * w[dy, dx, 0, ch]
                            gw[dy, dx, 0, ch] += gv * xp[b, i + dy, j + dx, ch]


def _conv_depthwise(x: np.ndarray, w: np.ndarray, pad: int):
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    out = np.zeros_like(x)
    _dw_forward_kernel(xp, w.astype(x.dtype, copy=False), out)
    return out, xp


def _conv_depthwise_backward(g, xp, w, pad):
    h, wd = g.shape[1], g.shape[2]
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    _dw_backward_kernel(np.ascontiguousarray(g), xp, w, gxp, gw)
    return gxp[:, pad:pad + h, pad:pad + wd, :], gw


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           pad: int | None = None, groups: int = 1) -> Tensor:
    """2-d cross-correlation with zero padding, NHWC in and out."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape}, {w.shape}")
    n, h, wd, cin = x.shape
    k, k2, cin_g, cout = w.shape
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d kernel must be square with odd size, got {k}x{k2}")
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(f"groups={groups} must divide Cin={cin} and Cout={cout}")
    if cin_g * groups != cin:
        raise DimensionError(f"kernel expects {cin_g * groups} input channels, input has {cin}")
    if stride != 1:
        raise ConfigError("only stride 1 is supported")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"bias shape {bias.shape} does not match Cout={cout}")
    pad = (k - 1) // 2 if pad is None else pad
    if pad != (k - 1) // 2:
        raise ConfigError("only same-size padding (k-1)/2 is supported")

    if groups == 1:
        out, cols = _conv_dense(x.data, w.data, pad)

        def bw_main(g):
            return _conv_dense_backward(g, x.data, w.data, cols, pad, x.requires_grad)
    elif groups == cin == cout:
        out, xp = _conv_depthwise(x.data, w.data, pad)

        def bw_main(g):
            return _conv_depthwise_backward(g, xp, w.data, pad)
    else:
        cout_g = cout // groups
        parts = [_conv_dense(x.data[..., i * cin_g:(i + 1) * cin_g],
                             w.data[..., i * cout_g:(i + 1) * cout_g], pad) for i in range(groups)]
        out = np.concatenate([p[0] for p in parts], axis=-1)

        def bw_main(g):
            gx, gw = [], []
            for i, (_, cols) in enumerate(parts):
                a, b = _conv_dense_backward(
                    g[..., i * cout_g:(i + 1) * cout_g], x.data[..., i * cin_g:(i + 1) * cin_g],
                    w.data[..., i * cout_g:(i + 1) * cout_g], cols, pad)
                gx.append(a)
                gw.append(b)
            return np.concatenate(gx, axis=-1), np.concatenate(gw, axis=-1)

    if bias is None:
        return record("conv2d", out, (x, w), bw_main)
    out = out + bias.data

    def bw(g):
        gx, gw = bw_main(g)
        return gx, gw, g.reshape(-1, cout).sum(axis=0)

    return record("conv2d", out, (x, w, bias), bw)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Fold each r x r block into channels: c_out = c_in*r*r + dy*r + dx."""
    n, h, w, c = x.shape
    if h % r or w % r:
        raise DimensionError(f"pixel_unshuffle: factor {r} does not divide {h}x{w}")
    out = (x.data.reshape(n, h // r, r, w // r, r, c)
           .transpose(0, 1, 3, 5, 2, 4)
           .reshape(n, h // r, w // r, c * r * r))

    def bw(g):
        return (g.reshape(n, h // r, w // r, c, r, r).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape),)

    return record("pixel_unshuffle", out, (x,), bw)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_unshuffle`."""
    n, h, w, c = x.shape
    if c % (r * r):
        raise DimensionError(f"pixel_shuffle: r^2={r * r} does not divide C={c}")
    co = c // (r * r)
    out = (x.data.reshape(n, h, w, co, r, r)
           .transpose(0, 1, 4, 2, 5, 3)
           .reshape(n, h * r, w * r, co))

    def bw(g):
        return (g.reshape(n, h, r, w, r, co).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape),)

    return record("pixel_shuffle", out, (x,), bw)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with the erf-based normal CDF."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return record("gelu", out.astype(x.dtype, copy=False), (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    # subnormal probabilities carry no information but stall BLAS kernels
    out[out < np.finfo(out.dtype).tiny] = 0.0

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (x,), bw)


def layer_norm_channel(x: Tensor, gamma: Tensor, beta: Tensor | None = None,
                       eps: float = 1e-5) -> Tensor:
    """Normalise the channel vector at every spatial location (biased variance)."""
    c = x.shape[-1]
    if gamma.shape != (c,) or (beta is not None and beta.shape != (c,)):
        raise DimensionError(f"layer norm parameters must have shape ({c},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data
    if beta is not None:
        out = out + beta.data

    def bw(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, c)
        ggamma = (g2 * xhat.reshape(-1, c)).sum(axis=0)
        if beta is None:
            return gx, ggamma
        return gx, ggamma, g2.sum(axis=0)

    inputs = (x, gamma) if beta is None else (x, gamma, beta)
    return record("layer_norm", out, inputs, bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading extents must be equal or 1."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs at least 2-d operands")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    lead_a, lead_b = a.shape[:-2], b.shape[:-2]
    for p, q in zip(reversed(lead_a), reversed(lead_b)):
        if p != q and p != 1 and q != 1:
            raise DimensionError(f"matmul batch extents incompatible: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return record("matmul", out, (a, b), bw)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out = x.data / denom

    def bw(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        gx = (g - out * proj * (norm >= eps)) / denom
        return (gx,)

    return record("l2_normalize", out, (x,), bw)
