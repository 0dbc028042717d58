"""Shared backbone and the HED-beta edge sub-network.

The backbone is a reduced five-stage VGG-like stack with 2x average pooling
between stages. Stages 1-3 are shared with the disparity branch (their last
output is the 1/4-resolution unary feature); stages 4-5, the five side
branches and the fusion layer belong to the edge sub-network.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Module, Node, constant, make_node
from .nn import Conv2d, ConvReLU, Sequential

N_STAGES = 5
N_SHARED = 3


def _stage(c_in: int, width: int, depth: int, rng) -> Sequential:
    layers = [ConvReLU(c_in if i == 0 else width, width, 3, rng) for i in range(depth)]
    return Sequential(*layers)


class Backbone(Module):
    """Stages 1-3, shared by both tasks."""

    def __init__(self, widths, depths, rng: np.random.Generator, in_channels: int = 3):
        self.widths = tuple(widths[:N_SHARED])
        c = in_channels
        self.stages = []
        for w, d in zip(widths[:N_SHARED], depths[:N_SHARED]):
            self.stages.append(_stage(c, w, d, rng))
            c = w

    def __call__(self, image) -> list[Node]:
        """Per-stage outputs at 1, 1/2 and 1/4 resolution."""
        taps = []
        x = constant(image)
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = ops.avg_pool(x, 2)
            x = stage(x)
            taps.append(x)
        return taps


class SideBranch(Module):
    def __init__(self, c_in: int, c_side: int, rng):
        self.conv1 = ConvReLU(c_in, c_side, 3, rng)
        self.conv2 = ConvReLU(c_side, c_side, 3, rng)
        self.score = Conv2d(c_side, 1, 1, rng)

    def __call__(self, tap, out_h: int, out_w: int) -> tuple[Node, Node]:
        feat = ops.bilinear_resize(self.conv2(self.conv1(tap)), out_h, out_w)
        return feat, self.score(feat)


@dataclass
class EdgeOutput:
    edge_map: Node
    edge_feature: Node
    side_maps: list[Node]
    fused_logit: Node
    side_logits: list[Node]


class EdgeNet(Module):
    """Deeper edge-only stages, five side branches and the fusion layer."""

    def __init__(self, widths, depths, side_channels: int, rng: np.random.Generator):
        self.side_channels = side_channels
        self.deep = [_stage(widths[i - 1], widths[i], depths[i], rng)
                     for i in range(N_SHARED, N_STAGES)]
        self.sides = [SideBranch(w, side_channels, rng) for w in widths[:N_STAGES]]
        self.fuse = Conv2d(N_STAGES, 1, 1, rng)

    @property
    def feature_channels(self) -> int:
        return N_STAGES * self.side_channels

    def __call__(self, image, shallow_taps: list[Node]) -> EdgeOutput:
        h, w = image.shape[-2:]
        taps = list(shallow_taps)
        x = taps[-1]
        for stage in self.deep:
            x = stage(ops.avg_pool(x, 2))
            taps.append(x)
        feats, logits = zip(*(side(t, h, w) for side, t in zip(self.sides, taps)))
        fused = self.fuse(ops.concat_channels(logits))
        return EdgeOutput(
            edge_map=ops.sigmoid(fused),
            edge_feature=ops.concat_channels(feats),
            side_maps=[ops.sigmoid(s) for s in logits],
            fused_logit=fused,
            side_logits=list(logits),
        )


def hed_beta_forward(image, backbone: Backbone, edge_net: EdgeNet,
                     shallow_taps: list[Node] | None = None) -> EdgeOutput:
    """Edge map and full-size edge feature for ``image`` [B, 3, H, W]."""
    h, w = image.shape[-2:]
    stride = 2 ** (N_STAGES - 1)
    if h % stride or w % stride:
        raise ValueError(f"image extents {h}x{w} must be divisible by {stride}")
    if shallow_taps is None:
        shallow_taps = backbone(image)
    return edge_net(image, shallow_taps)


def class_balanced_bce(pred, label, ignore_mask=None, clamp: float = 1e-7) -> Node:
    """Class-balanced binary cross-entropy on probabilities.

    ``beta`` is the fraction of negatives among the non-ignored pixels of the
    whole batch; it weights the positive term, ``1 - beta`` the negative one.
    """
    pred = constant(pred)
    y = np.asarray(label, dtype=pred.dtype)
    if y.shape != pred.shape:
        raise ValueError(f"label shape {y.shape} != prediction shape {pred.shape}")
    keep = np.ones(y.shape, dtype=bool) if ignore_mask is None else ~np.asarray(ignore_mask, dtype=bool)
    n = int(keep.sum())
    if n == 0:
        raise ValueError("no pixels left after applying the ignore mask")
    n_pos = float((y * keep).sum())
    beta = (n - n_pos) / n
    p = pred.value
    pc = np.clip(p, clamp, 1 - clamp)
    k = keep.astype(p.dtype)
    wpos = beta * y * k
    wneg = (1 - beta) * (1 - y) * k
    loss = -(wpos * np.log(pc) + wneg * np.log(1 - pc)).sum() / n
    inside = ((p > clamp) & (p < 1 - clamp)).astype(p.dtype)

    def back(g):
        return (g * (-(wpos / pc) + wneg / (1 - pc)) * inside / n,)

    return make_node(np.asarray(loss, dtype=p.dtype), (pred,), back)


def edge_loss(out: EdgeOutput, labels) -> Node:
    """Phase-1 objective: balanced BCE on every side map plus the fused map."""
    total = class_balanced_bce(out.edge_map, labels)
    for side in out.side_maps:
        total = ops.add(total, class_balanced_bce(side, labels))
    return total
