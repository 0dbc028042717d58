"""Stereo-specific differentiable operators.

Convention: the left image is the reference; left pixel ``x`` corresponds to
right pixel ``x - d``.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Node, constant, make_node


def correlation1d(fl, fr, max_disp: int) -> Node:
    """Horizontal cost volume with a 1x1 patch, normalised by channel count.

    ``out[b, d, y, x] = mean_c fl[b, c, y, x] * fr[b, c, y, x - d]``; positions
    with ``x - d < 0`` are zero.
    """
    fl, fr = constant(fl), constant(fr)
    if fl.shape != fr.shape:
        raise ValueError(f"feature shapes differ: {fl.shape} vs {fr.shape}")
    B, C, H, W = fl.shape
    if not 0 <= max_disp < W:
        raise ValueError(f"max_disp={max_disp} must lie in [0, {W})")
    a, b = fl.value, fr.value
    out = np.zeros((B, max_disp + 1, H, W), dtype=np.result_type(a.dtype, b.dtype))
    for d in range(max_disp + 1):
        out[:, d, :, d:] = np.einsum("bchw,bchw->bhw", a[..., d:], b[..., :W - d]) / C

    def back(g):
        ga = np.zeros_like(a) if fl.requires_grad else None
        gb = np.zeros_like(b) if fr.requires_grad else None
        for d in range(max_disp + 1):
            gd = g[:, d:d + 1, :, d:] / C
            if ga is not None:
                ga[..., d:] += gd * b[..., :W - d]
            if gb is not None:
                gb[..., :W - d] += gd * a[..., d:]
        return ga, gb

    return make_node(out, (fl, fr), back)


def warp_right_to_left(right, disp) -> Node:
    """Sample ``right`` at ``(y, x - disp)`` with linear interpolation along x.

    Sample coordinates outside the row are clamped to the border, where the
    gradient with respect to disparity is zero.
    """
    right, disp = constant(right), constant(disp)
    B, C, h, w = right.shape
    if disp.shape != (B, 1, h, w):
        raise ValueError(f"disparity shape {disp.shape} does not match image {right.shape}")
    r = right.value
    xs = np.arange(w, dtype=disp.dtype) - disp.value[:, 0]  # [B, h, w]
    inside = (xs > 0) & (xs < w - 1)
    xc = np.clip(xs, 0, w - 1)
    if w == 1:
        x0 = np.zeros(xs.shape, dtype=np.intp)
        x1 = x0
        frac = np.zeros_like(xc)
    else:
        x0 = np.minimum(np.floor(xc).astype(np.intp), w - 2)
        x1 = x0 + 1
        frac = (xc - x0).astype(xc.dtype)
    bi = np.arange(B)[:, None, None, None]
    ci = np.arange(C)[None, :, None, None]
    yi = np.arange(h)[None, None, :, None]
    r0 = r[bi, ci, yi, x0[:, None]]
    r1 = r[bi, ci, yi, x1[:, None]]
    f = frac[:, None]
    out = (1 - f) * r0 + f * r1

    def back(g):
        gr = gd = None
        if right.requires_grad:
            row = ((bi * C + ci) * h + yi) * w
            gr = (np.bincount((row + x0[:, None]).ravel(), (g * (1 - f)).ravel(), r.size)
                  + np.bincount((row + x1[:, None]).ravel(), (g * f).ravel(), r.size))
            gr = gr.reshape(r.shape).astype(r.dtype)
        if disp.requires_grad:
            # d out / d disp = -(r1 - r0) inside the row, zero where clamped
            gd = (-(g * (r1 - r0)).sum(axis=1, keepdims=True) * inside[:, None]).astype(disp.dtype)
        return gr, gd

    return make_node(out, (right, disp), back)


def error_map(left, synthesized) -> Node:
    left, synthesized = constant(left), constant(synthesized)
    if left.shape != synthesized.shape:
        raise ValueError(f"shape mismatch {left.shape} vs {synthesized.shape}")
    return ops.abs_(ops.sub(left, synthesized))


def upsample_disparity(coarse) -> Node:
    """Double spatial extent and disparity values (pixel units of the finer grid)."""
    coarse = constant(coarse)
    h, w = coarse.shape[-2:]
    return ops.scale(ops.bilinear_resize(coarse, 2 * h, 2 * w), 2.0)


def compose_disparity(coarse, residual) -> Node:
    """``max(2 * u(coarse) + residual, 0)``."""
    coarse, residual = constant(coarse), constant(residual)
    h, w = coarse.shape[-2:]
    if residual.shape[-2:] != (2 * h, 2 * w) or residual.shape[:2] != coarse.shape[:2]:
        raise ValueError(f"residual {residual.shape} is not twice coarse {coarse.shape}")
    return ops.clamp_min(ops.add(upsample_disparity(coarse), residual), 0.0)


def spatial_gradients(x) -> tuple[Node, Node]:
    """Forward differences along x and y; the last column/row is zero."""
    x = constant(x)
    v = x.value
    gx = np.zeros_like(v)
    gy = np.zeros_like(v)
    gx[..., :, :-1] = v[..., :, 1:] - v[..., :, :-1]
    gy[..., :-1, :] = v[..., 1:, :] - v[..., :-1, :]

    def back_x(g):
        out = np.zeros_like(g)
        out[..., :, 1:] += g[..., :, :-1]
        out[..., :, :-1] -= g[..., :, :-1]
        return (out,)

    def back_y(g):
        out = np.zeros_like(g)
        out[..., 1:, :] += g[..., :-1, :]
        out[..., :-1, :] -= g[..., :-1, :]
        return (out,)

    return make_node(gx, (x,), back_x), make_node(gy, (x,), back_y)
