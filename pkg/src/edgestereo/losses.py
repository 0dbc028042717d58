"""Disparity losses with deep supervision, and evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .autodiff import Node, constant
from .stereo_ops import spatial_gradients

LAMBDA_DS = 0.1


def regression_loss(d, gt, valid_mask=None) -> Node:
    """Masked mean absolute disparity error."""
    d = constant(d)
    gt = np.asarray(gt.value if isinstance(gt, Node) else gt, dtype=d.dtype)
    if gt.shape != d.shape:
        raise ValueError(f"prediction {d.shape} and ground truth {gt.shape} differ")
    mask = np.ones(d.shape, bool) if valid_mask is None else np.asarray(valid_mask, bool)
    if not mask.any():
        raise ValueError("no valid pixels")
    return ops.masked_mean(ops.abs_(ops.sub(d, gt)), mask)


def edge_aware_smoothness(d, edge_map) -> Node:
    """Disparity gradients weighted by ``exp(-|edge gradient|)``.

    The edge map is a constant here; no gradient flows into it.
    """
    d = constant(d)
    e = np.asarray(edge_map.value if isinstance(edge_map, Node) else edge_map, dtype=d.dtype)
    if e.shape != d.shape:
        raise ValueError(f"edge map {e.shape} does not match disparity {d.shape}")
    ex, ey = (g.value for g in spatial_gradients(e))
    wx = np.exp(-np.abs(ex))
    wy = np.exp(-np.abs(ey))
    dx, dy = spatial_gradients(d)
    total = ops.add(ops.mul(ops.abs_(dx), wx), ops.mul(ops.abs_(dy), wy))
    return ops.scale(ops.reduce_sum(total), 1.0 / d.value.size)


def downsample_ground_truth(gt: np.ndarray, valid: np.ndarray, octaves: int):
    """2x2 average per octave with value halving; a coarse pixel is valid only
    if every full-resolution pixel under it is valid."""
    gt = np.asarray(gt)
    valid = np.ones(gt.shape, bool) if valid is None else np.asarray(valid, bool)
    for _ in range(octaves):
        h, w = gt.shape[-2:]
        if h % 2 or w % 2:
            raise ValueError(f"cannot halve extents {h}x{w}")
        blocks = gt.reshape(gt.shape[:-2] + (h // 2, 2, w // 2, 2))
        gt = blocks.mean(axis=(-3, -1)) * 0.5
        vb = valid.reshape(valid.shape[:-2] + (h // 2, 2, w // 2, 2))
        valid = vb.all(axis=(-3, -1))
    return gt, valid


@dataclass
class LossBreakdown:
    """Per-scale terms ordered like the supervised maps (coarse to fine)."""

    regression: list[float]
    smoothness: list[float]
    per_scale: list[float]
    smooth_weight: float
    phase: int
    total: Node
    scales: list[int] = field(default_factory=list)

    @property
    def value(self) -> float:
        return float(self.total.value)

    def parts_sum(self):
        acc = None
        for c in self.per_scale:
            acc = c if acc is None else acc + c
        return acc


def deep_supervision(maps, gt_full, valid_full, edge_map=None, lambda_ds: float = LAMBDA_DS,
                     phase: int = 2) -> LossBreakdown:
    """Sum of per-scale losses ``C_s = L_r + lambda * L_ds`` (phase 2) or ``L_r`` (phase 3).

    ``maps`` are ordered coarse to fine; each map's scale is inferred from its
    height relative to ``gt_full``. The smoothness term is skipped when no
    edge map is supplied.
    """
    if phase not in (2, 3):
        raise ValueError("deep supervision applies to phases 2 and 3")
    gt_full = np.asarray(gt_full)
    H = gt_full.shape[-2]
    weight = lambda_ds if (phase == 2 and edge_map is not None) else 0.0
    emap = None if edge_map is None else constant(edge_map)
    reg, smooth, per_scale, scales = [], [], [], []
    total = None
    for d in maps:
        h, w = d.shape[-2:]
        octaves = int(round(np.log2(H / h)))
        if H >> octaves != h:
            raise ValueError(f"map height {h} is not a power-of-two fraction of {H}")
        gt_s, valid_s = downsample_ground_truth(gt_full, valid_full, octaves)
        if not valid_s.any():
            raise ValueError(f"no valid ground truth at scale {octaves}")
        lr = regression_loss(d, gt_s, valid_s)
        c_s = lr
        ls_val = 0.0
        if weight:
            ls = edge_aware_smoothness(d, ops.bilinear_resize(emap, h, w))
            ls_val = ls.value[()]
            c_s = ops.add(lr, ops.scale(ls, weight))
        reg.append(lr.value[()])
        smooth.append(ls_val)
        per_scale.append(c_s.value[()])
        scales.append(octaves)
        total = c_s if total is None else ops.add(total, c_s)
    return LossBreakdown(reg, smooth, per_scale, weight, phase, total, scales)


@dataclass
class EvalReport:
    epe: float
    bad: dict[float, float]
    valid_count: int

    def to_text(self) -> str:
        lines = [f"epe: {self.epe:.3f}"]
        for t in sorted(self.bad):
            lines.append(f"bad_{t:g}: {100 * self.bad[t]:.1f}%")
        lines.append(f"valid_count: {self.valid_count}")
        return "\n".join(lines) + "\n"


def evaluate(pred, gt, valid_mask=None, thresholds=(1.0, 3.0, 5.0)) -> EvalReport:
    """End-point error and t-pixel error rates over valid pixels."""
    pred = np.asarray(pred.value if isinstance(pred, Node) else pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    mask = np.ones(gt.shape, bool) if valid_mask is None else np.asarray(valid_mask, bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("no valid pixels")
    err = np.abs(pred - gt)[mask]
    return EvalReport(float(err.mean()), {float(t): float((err > t).mean()) for t in thresholds}, n)
