"""Differentiable operators on NCHW tensors."""
from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from .autodiff import Node, constant, make_node


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Node:
    a, b = constant(a), constant(b)
    return make_node(a.value + b.value, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Node:
    a, b = constant(a), constant(b)
    return make_node(a.value - b.value, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Node:
    a, b = constant(a), constant(b)
    return make_node(a.value * b.value, (a, b),
                     lambda g: (_unbroadcast(g * b.value, a.shape),
                                _unbroadcast(g * a.value, b.shape)))


def scale(x, factor: float) -> Node:
    x = constant(x)
    return make_node(x.value * factor, (x,), lambda g: (g * factor,))


def neg(x) -> Node:
    return scale(x, -1.0)


def abs_(x) -> Node:
    x = constant(x)
    return make_node(np.abs(x.value), (x,), lambda g: (g * np.sign(x.value),))


def exp(x) -> Node:
    x = constant(x)
    out = np.exp(x.value)
    return make_node(out, (x,), lambda g: (g * out,))


def relu(x) -> Node:
    x = constant(x)
    mask = x.value > 0
    return make_node(np.where(mask, x.value, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Node:
    x = constant(x)
    v = x.value
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return make_node(out, (x,), lambda g: (g * out * (1 - out),))


def log(x) -> Node:
    x = constant(x)
    return make_node(np.log(x.value), (x,), lambda g: (g / x.value,))


def clip(x, lo: float, hi: float) -> Node:
    """Clamp to [lo, hi]; gradient passes only strictly inside the interval."""
    x = constant(x)
    inside = (x.value > lo) & (x.value < hi)
    return make_node(np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,))


def clamp_min(x, lo: float = 0.0) -> Node:
    x = constant(x)
    keep = x.value > lo
    return make_node(np.where(keep, x.value, lo).astype(x.dtype), (x,), lambda g: (g * keep,))


# -- reductions -------------------------------------------------------------

def reduce_sum(x) -> Node:
    x = constant(x)
    return make_node(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def reduce_mean(x) -> Node:
    x = constant(x)
    n = x.value.size
    if n == 0:
        raise ValueError("reduce_mean over an empty tensor")
    return make_node(x.value.mean(), (x,),
                     lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def masked_mean(x, mask: np.ndarray) -> Node:
    """Mean of ``x`` over positions where ``mask`` is true."""
    x = constant(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("masked_mean over an empty mask")
    w = mask.astype(x.dtype)
    return make_node((x.value * w).sum() / n, (x,), lambda g: (g * w / n,))


# -- structure --------------------------------------------------------------

def concat_channels(xs: Sequence) -> Node:
    xs = [constant(x) for x in xs]
    if not xs:
        raise ValueError("nothing to concatenate")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.value.ndim != len(ref) or x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ValueError(f"cannot concatenate {x.shape} with {ref} along channels")
    sizes = [x.shape[1] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return make_node(np.concatenate([x.value for x in xs], axis=1), xs, back)


def reshape(x, shape) -> Node:
    x = constant(x)
    return make_node(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


# -- convolution ------------------------------------------------------------

def conv_output_size(n: int, k: int, stride: int, pad: int, dilation: int) -> int:
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0, dilation: int = 1) -> Node:
    """2-D cross-correlation, NCHW input and KCHW weight.

    Accumulates one matrix product per kernel tap rather than materialising
    the full im2col buffer, which keeps memory flat at full resolution.
    """
    x, weight = constant(x), constant(weight)
    bias = constant(bias) if bias is not None else None
    B, C, H, W = x.shape
    K, Cw, kh, kw = weight.shape
    if Cw != C:
        raise ValueError(f"input has {C} channels, weight expects {Cw}")
    if min(kh, kw) < 1 or stride < 1 or dilation < 1 or pad < 0:
        raise ValueError("invalid convolution geometry")
    Ho = conv_output_size(H, kh, stride, pad, dilation)
    Wo = conv_output_size(W, kw, stride, pad, dilation)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"non-positive output extent {Ho}x{Wo}")
    xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.value
    wv = weight.value

    def tap(i, j):
        y0, x0 = i * dilation, j * dilation
        return (slice(None), slice(None),
                slice(y0, y0 + stride * (Ho - 1) + 1, stride),
                slice(x0, x0 + stride * (Wo - 1) + 1, stride))

    out = np.zeros((K, B, Ho, Wo), dtype=np.result_type(x.dtype, wv.dtype))
    for i in range(kh):
        for j in range(kw):
            out += np.tensordot(wv[:, :, i, j], xp[tap(i, j)], axes=([1], [1]))
    out = out.transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.value.reshape(1, K, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        gt = g.transpose(1, 0, 2, 3)
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros((C, B) + xp.shape[2:], dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    sl = tap(i, j)
                    gxp[:, :, sl[2], sl[3]] += np.tensordot(wv[:, :, i, j], gt, axes=([0], [0]))
            gxp = gxp.transpose(1, 0, 2, 3)
            gx = np.ascontiguousarray(gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp)
        if weight.requires_grad:
            gw = np.empty_like(wv)
            for i in range(kh):
                for j in range(kw):
                    gw[:, :, i, j] = np.tensordot(g, xp[tap(i, j)], axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_node(out, parents, back)


# -- pooling and resampling -------------------------------------------------

def avg_pool(x, kernel: int, stride: int | None = None) -> Node:
    x = constant(x)
    stride = stride or kernel
    B, C, H, W = x.shape
    Ho = (H - kernel) // stride + 1
    Wo = (W - kernel) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ValueError("pooling window larger than input")
    out = np.zeros((B, C, Ho, Wo), dtype=x.dtype)
    taps = [(i, j) for i in range(kernel) for j in range(kernel)]
    for i, j in taps:
        out += x.value[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride]
    out /= kernel * kernel

    def back(g):
        gx = np.zeros_like(x.value)
        gs = g / (kernel * kernel)
        for i, j in taps:
            gx[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += gs
        return (gx,)

    return make_node(out, (x,), back)


@lru_cache(maxsize=256)
def _adaptive_matrix(n_in: int, n_out: int) -> np.ndarray:
    # bin i covers [floor(i*n/m), ceil((i+1)*n/m))
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


@lru_cache(maxsize=256)
def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the border
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def _separable(x: Node, my: np.ndarray, mx: np.ndarray) -> Node:
    my = my.astype(x.dtype)
    mx = mx.astype(x.dtype)
    out = np.matmul(np.matmul(my, x.value), mx.T)
    return make_node(out, (x,), lambda g: (np.matmul(np.matmul(my.T, g), mx),))


def bilinear_resize(x, out_h: int, out_w: int) -> Node:
    """Bilinear resampling with align-corners-false coordinates."""
    x = constant(x)
    if out_h < 1 or out_w < 1:
        raise ValueError("resize target must be positive")
    H, W = x.shape[-2:]
    if (H, W) == (out_h, out_w):
        return x
    return _separable(x, _bilinear_matrix(H, out_h), _bilinear_matrix(W, out_w))


def adaptive_avg_pool(x, out_h: int, out_w: int) -> Node:
    """Average pooling to an exact output size (ceil-mode bin edges)."""
    x = constant(x)
    if out_h < 1 or out_w < 1:
        raise ValueError("pooled size must be positive")
    H, W = x.shape[-2:]
    return _separable(x, _adaptive_matrix(H, out_h), _adaptive_matrix(W, out_w))
