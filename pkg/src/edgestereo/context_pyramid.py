"""Convolution, pooling and dilation context pyramids.

Each pyramid has four parallel branches with growing receptive fields; their
outputs are concatenated with the input to form the scene prior.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Module, Node
from .nn import ConvReLU

KINDS = {"C": "convolution", "P": "pooling", "D": "dilation"}
_NOTATION = re.compile(r"^([CPD])-(\d+)_(\d+)_(\d+)_(\d+)$")


@dataclass(frozen=True)
class ContextPyramidConfig:
    kind: str
    branch_params: tuple[int, int, int, int]
    branch_channels: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS.values():
            raise ValueError(f"unknown pyramid kind {self.kind!r}")
        params = tuple(int(p) for p in self.branch_params)
        object.__setattr__(self, "branch_params", params)
        if len(params) != 4 or min(params) < 1:
            raise ValueError("a context pyramid has exactly four positive branch parameters")
        # the largest context scale comes first: biggest kernel / rate, smallest pooled size
        if self.kind == "pooling":
            ordered = all(a < b for a, b in zip(params, params[1:]))
        else:
            ordered = all(a > b for a, b in zip(params, params[1:]))
        if not ordered:
            raise ValueError(f"branch parameters {params} are not ordered for a {self.kind} pyramid")
        if self.kind == "convolution" and any(p % 2 == 0 for p in params):
            raise ValueError("convolution pyramid kernels must be odd to preserve extents")

    @classmethod
    def parse(cls, notation: str, branch_channels: int | None = None) -> "ContextPyramidConfig":
        """Parse names like ``"P-2_4_8_16"`` or ``"D-6_3_2_1"``."""
        m = _NOTATION.match(notation.strip())
        if not m:
            raise ValueError(f"cannot parse context pyramid {notation!r}")
        return cls(KINDS[m.group(1)], tuple(int(g) for g in m.groups()[1:]), branch_channels)

    @property
    def notation(self) -> str:
        letter = next(k for k, v in KINDS.items() if v == self.kind)
        return f"{letter}-" + "_".join(str(p) for p in self.branch_params)


class ContextBranch(Module):
    def __init__(self, kind: str, size: int, c_in: int, c_out: int, rng: np.random.Generator):
        self.kind = kind
        self.size = size
        self.out_channels = c_out
        if kind == "convolution":
            self.conv1 = ConvReLU(c_in, c_out, size, rng)
            self.conv2 = ConvReLU(c_out, c_out, size, rng)
        elif kind == "pooling":
            self.proj = ConvReLU(c_in, c_out, 1, rng)
        elif kind == "dilation":
            self.dilated = ConvReLU(c_in, c_out, 3, rng, dilation=size)
            self.reduce = ConvReLU(c_out, c_out, 1, rng)
        else:
            raise ValueError(f"unknown branch kind {kind!r}")

    def __call__(self, x) -> Node:
        if self.kind == "convolution":
            return self.conv2(self.conv1(x))
        if self.kind == "pooling":
            h, w = x.shape[-2:]
            pooled = ops.adaptive_avg_pool(x, self.size, self.size)
            return ops.bilinear_resize(self.proj(pooled), h, w)
        return self.reduce(self.dilated(x))


def build_context_branch(config: ContextPyramidConfig, index: int, c_in: int,
                         rng: np.random.Generator) -> ContextBranch:
    if not 0 <= index < 4:
        raise IndexError("branch index must be in 0..3")
    width = config.branch_channels or max(1, c_in // 4)
    return ContextBranch(config.kind, config.branch_params[index], c_in, width, rng)


class ContextPyramid(Module):
    def __init__(self, config: ContextPyramidConfig, c_in: int, rng: np.random.Generator):
        self.config = config
        self.c_in = c_in
        self.branches = [build_context_branch(config, i, c_in, rng) for i in range(4)]

    @property
    def out_channels(self) -> int:
        return self.c_in + sum(b.out_channels for b in self.branches)

    def __call__(self, fm) -> Node:
        return scene_prior(fm, self)


def scene_prior(fm, pyramid: ContextPyramid) -> Node:
    """Concatenate ``fm`` with the four branch outputs, in branch order."""
    h, w = fm.shape[-2:]
    if pyramid.config.kind == "pooling" and max(pyramid.config.branch_params) > min(h, w):
        raise ValueError(f"input {h}x{w} is smaller than pooled size "
                         f"{max(pyramid.config.branch_params)}")
    outs = [branch(fm) for branch in pyramid.branches]
    for o in outs:
        if o.shape[-2:] != (h, w):
            raise ValueError(f"branch output {o.shape} does not match input extents {(h, w)}")
    return ops.concat_channels([fm] + outs)
