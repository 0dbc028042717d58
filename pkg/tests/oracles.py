"""Naive loop implementations used as independent references.

Nothing here imports the package; each function is written directly from
the operator's definition, favouring obviousness over speed.
"""
from __future__ import annotations

import math

import numpy as np


def conv2d(x, w, b=None, stride=1, pad=0, dilation=1):
    B, C, H, W = x.shape
    K, _, kh, kw = w.shape
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    xp[:, :, pad:pad + H, pad:pad + W] = x
    oh = (H + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
    ow = (W + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((B, K, oh, ow))
    for n in range(B):
        for k in range(K):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0 if b is None else float(b[k])
                    for c in range(C):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[k, c, u, v] * xp[n, c, i * stride + u * dilation,
                                                          j * stride + v * dilation]
                    out[n, k, i, j] = acc
    return out


def correlation1d(fl, fr, max_disp):
    B, C, H, W = fl.shape
    out = np.zeros((B, max_disp + 1, H, W))
    for n in range(B):
        for d in range(max_disp + 1):
            for y in range(H):
                for x in range(W):
                    if x - d >= 0:
                        out[n, d, y, x] = sum(fl[n, c, y, x] * fr[n, c, y, x - d]
                                              for c in range(C)) / C
    return out


def warp(right, disp):
    B, C, h, w = right.shape
    out = np.zeros_like(right, dtype=np.float64)
    for n in range(B):
        for y in range(h):
            for x in range(w):
                pos = min(max(x - disp[n, 0, y, x], 0.0), w - 1.0)
                x0 = int(math.floor(pos))
                x1 = min(x0 + 1, w - 1)
                f = pos - x0
                out[n, :, y, x] = (1 - f) * right[n, :, y, x0] + f * right[n, :, y, x1]
    return out


def resize_axis_weights(n_in, n_out):
    """Half-pixel-centre linear interpolation weights with border clamping."""
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        src = (o + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        f = src - i0
        m[o, i0] += 1 - f
        m[o, i1] += f
    return m


def bilinear_resize(x, out_h, out_w):
    my = resize_axis_weights(x.shape[-2], out_h)
    mx = resize_axis_weights(x.shape[-1], out_w)
    out = np.zeros(x.shape[:-2] + (out_h, out_w))
    for idx in np.ndindex(*x.shape[:-2]):
        out[idx] = my @ x[idx] @ mx.T
    return out


def balanced_bce(pred, label, clamp=1e-7):
    p = np.clip(np.asarray(pred, np.float64).ravel(), clamp, 1 - clamp)
    y = np.asarray(label, np.float64).ravel()
    beta = (y == 0).sum() / y.size
    total = 0.0
    for pi, yi in zip(p, y):
        total += beta * yi * math.log(pi) + (1 - beta) * (1 - yi) * math.log(1 - pi)
    return -total / y.size


def smoothness(d, e):
    d = np.asarray(d, np.float64)
    e = np.asarray(e, np.float64)
    h, w = d.shape[-2:]
    total = 0.0
    for idx in np.ndindex(*d.shape[:-2]):
        for y in range(h):
            for x in range(w):
                if x + 1 < w:
                    total += abs(d[idx][y, x + 1] - d[idx][y, x]) * \
                        math.exp(-abs(e[idx][y, x + 1] - e[idx][y, x]))
                if y + 1 < h:
                    total += abs(d[idx][y + 1, x] - d[idx][y, x]) * \
                        math.exp(-abs(e[idx][y + 1, x] - e[idx][y, x]))
    return total / d.size


def adam(w, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return w


def pfm_bytes_le(rows_top_down):
    """Little-endian "Pf" file for a 2-D list, rows written bottom-up."""
    h, w = len(rows_top_down), len(rows_top_down[0])
    import struct
    body = b"".join(struct.pack("<%df" % w, *row) for row in reversed(rows_top_down))
    return f"Pf\n{w} {h}\n-1.0\n".encode() + body
