"""Encoder and one-stage residual-pyramid decoder.

Scale ``s`` runs at ``1 / 2**s`` of the input resolution. The coarsest scale
regresses a disparity map directly; every finer scale predicts a residual that
refines the doubled, upsampled disparity of the scale below.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .autodiff import Module, Node, constant
from .nn import Conv2d, ConvReLU, Sequential
from .stereo_ops import error_map, upsample_disparity, warp_right_to_left

# skip features for scales 0..1 come from the shared backbone, scale 2 onward
# from the encoder applied to the scene prior
PRIOR_SCALE = 2
GEOMETRY_CHANNELS = 3 + 3 + 1 + 3 + 3


@dataclass
class EncoderState:
    features: list[Node]

    @property
    def scales(self) -> int:
        return len(self.features)


@dataclass
class PyramidOutput:
    """Per-scale records, all ordered coarsest to finest."""

    disparities: list[Node]
    residuals: list[Node | None] = field(default_factory=list)
    upsampled: list[Node | None] = field(default_factory=list)
    raw: list[Node] = field(default_factory=list)


class EstimationBlock(Module):
    """Four 3x3 convolutions; ReLU after all but the last, which emits one channel."""

    def __init__(self, c_in: int, width: int, rng: np.random.Generator):
        self.convs = Sequential(
            ConvReLU(c_in, width, 3, rng),
            ConvReLU(width, width, 3, rng),
            ConvReLU(width, width, 3, rng),
            Conv2d(width, 1, 3, rng),
        )

    def __call__(self, agg) -> Node:
        return self.convs(agg)


def estimation_block(agg, block: EstimationBlock) -> Node:
    return block(agg)


def encoder_widths(base: int, scales: int, cap: int) -> list[int]:
    """Doubling schedule from the prior scale down, capped at ``cap``."""
    return [min(base * 2 ** (s - PRIOR_SCALE), cap) for s in range(PRIOR_SCALE, scales)]


class Encoder(Module):
    def __init__(self, prior_channels: int, scales: int, base: int, cap: int,
                 rng: np.random.Generator):
        if scales <= PRIOR_SCALE:
            raise ValueError(f"need at least {PRIOR_SCALE + 1} scales, got {scales}")
        self.widths = encoder_widths(base, scales, cap)
        self.entry = ConvReLU(prior_channels, self.widths[0], 3, rng)
        self.down = []
        for c_prev, c in zip(self.widths, self.widths[1:]):
            self.down.append(Sequential(ConvReLU(c_prev, c, 3, rng, stride=2, pad=1),
                                        ConvReLU(c, c, 3, rng)))

    def __call__(self, prior, shallow_taps: list[Node]) -> EncoderState:
        feats = list(shallow_taps[:PRIOR_SCALE])
        x = self.entry(prior)
        feats.append(x)
        for block in self.down:
            x = block(x)
            feats.append(x)
        return EncoderState(feats)


def aggregate(skip, edge_feat, edge_map, geometry) -> Node:
    """Concatenate whatever cues are available at one scale."""
    h, w = skip.shape[-2:]
    parts = [skip]
    if edge_feat is not None:
        parts.append(ops.bilinear_resize(edge_feat, h, w))
    if edge_map is not None:
        parts.append(ops.bilinear_resize(edge_map, h, w))
    if geometry is not None:
        parts.extend(geometry)
    return ops.concat_channels(parts)


def geometrical_constraints(left_s, right_s, disp) -> list[Node]:
    """``[I_L, I_R, d, warped right, |I_L - warped right|]`` at one scale."""
    synth = warp_right_to_left(right_s, disp)
    return [left_s, right_s, disp, synth, error_map(left_s, synth)]


def decode_pyramid(blocks: list[EstimationBlock], enc: EncoderState, edge_feat, edge_map,
                   left, right) -> PyramidOutput:
    """Run the decoder from the coarsest scale to full resolution.

    ``blocks[s]`` is the estimation block for scale ``s``. Images are resized
    to every scale; geometry is built from the upsampled coarser disparity and
    is absent at the coarsest scale.
    """
    S = enc.scales
    if S < 2 or len(blocks) != S:
        raise ValueError(f"{len(blocks)} estimation blocks for {S} encoder scales")
    left, right = constant(left), constant(right)
    H, W = left.shape[-2:]
    for s, f in enumerate(enc.features):
        if f.shape[-2:] != (H >> s, W >> s) or (H >> s) << s != H or (W >> s) << s != W:
            raise ValueError(f"encoder scale {s} has extents {f.shape[-2:]}, "
                             f"expected {(H >> s, W >> s)}")
    out = PyramidOutput([], [], [], [])
    disp = None
    for s in range(S - 1, -1, -1):
        skip = enc.features[s]
        h, w = skip.shape[-2:]
        if disp is None:
            raw = blocks[s](aggregate(skip, edge_feat, edge_map, None))
            disp = ops.clamp_min(raw, 0.0)
            up = residual = None
        else:
            up = upsample_disparity(disp)
            geo = geometrical_constraints(ops.bilinear_resize(left, h, w),
                                          ops.bilinear_resize(right, h, w), up)
            residual = blocks[s](aggregate(skip, edge_feat, edge_map, geo))
            raw = ops.add(up, residual)
            disp = ops.clamp_min(raw, 0.0)
        out.disparities.append(disp)
        out.residuals.append(residual)
        out.upsampled.append(up)
        out.raw.append(raw)
    return out


class ResidualPyramid(Module):
    """Encoder plus one estimation block per scale."""

    def __init__(self, prior_channels: int, skip_channels: list[int], scales: int,
                 enc_base: int, enc_cap: int, est_width: int, edge_channels: int,
                 use_edge_cues: bool, rng: np.random.Generator):
        self.scales = scales
        self.encoder = Encoder(prior_channels, scales, enc_base, enc_cap, rng)
        skips = list(skip_channels[:PRIOR_SCALE]) + self.encoder.widths
        extra = edge_channels + 1 if use_edge_cues else 0
        self.blocks = [
            EstimationBlock(skips[s] + extra + (0 if s == scales - 1 else GEOMETRY_CHANNELS),
                            est_width, rng)
            for s in range(scales)
        ]

    def __call__(self, prior, shallow_taps, edge_feat, edge_map, left, right) -> PyramidOutput:
        enc = self.encoder(prior, shallow_taps)
        return decode_pyramid(self.blocks, enc, edge_feat, edge_map, left, right)
