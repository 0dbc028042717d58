"""EdgeStereo assembly: shared features, cost volume, mixed feature, context
pyramid, residual pyramid and the edge sub-network."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .autodiff import Module, Node, ParamGroup, constant
from .context_pyramid import ContextPyramid, ContextPyramidConfig
from .edge_net import N_STAGES, Backbone, EdgeNet, EdgeOutput
from .nn import ConvReLU
from .residual_pyramid import PyramidOutput, ResidualPyramid
from .stereo_ops import correlation1d

FEATURE_STRIDE = 4

BACKBONE = "backbone-shared"
EDGE = "edge-subnet"
DISPARITY = "disparity-branch"


@dataclass
class ModelConfig:
    backbone_widths: tuple[int, ...] = (8, 16, 24, 32, 32)
    backbone_depths: tuple[int, ...] = (1, 1, 1, 1, 1)
    side_channels: int = 4
    reduced_channels: int = 16
    mixed_channels: int = 32
    pyramid: str = "P-1_2_4_8"
    branch_channels: int | None = None
    scales: int = 4
    encoder_base: int = 32
    encoder_cap: int = 64
    est_width: int = 16
    max_disp: int = 4
    use_edge_cues: bool = True

    def __post_init__(self):
        self.backbone_widths = tuple(self.backbone_widths)
        self.backbone_depths = tuple(self.backbone_depths)
        if len(self.backbone_widths) != N_STAGES or len(self.backbone_depths) != N_STAGES:
            raise ValueError(f"backbone needs {N_STAGES} stage widths and depths")
        ContextPyramidConfig.parse(self.pyramid, self.branch_channels)
        if self.scales < 3:
            raise ValueError("the residual pyramid needs at least 3 scales")

    @property
    def pyramid_config(self) -> ContextPyramidConfig:
        return ContextPyramidConfig.parse(self.pyramid, self.branch_channels)

    @property
    def divisor(self) -> int:
        return max(2 ** (N_STAGES - 1), 2 ** (self.scales - 1))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def full(cls, **overrides) -> "ModelConfig":
        """Seven output scales (factor 64) and max displacement 40, reduced widths."""
        base = dict(backbone_widths=(8, 16, 32, 32, 32), backbone_depths=(2, 2, 3, 3, 3),
                    side_channels=4, reduced_channels=16, mixed_channels=32,
                    pyramid="P-2_4_8_16", scales=7, encoder_base=32, encoder_cap=64,
                    est_width=8, max_disp=40)
        base.update(overrides)
        return cls(**base)


@dataclass
class ModelOutput:
    pyramid: PyramidOutput
    edge: EdgeOutput | None

    @property
    def disparities(self) -> list[Node]:
        return self.pyramid.disparities

    @property
    def disparity(self) -> Node:
        return self.pyramid.disparities[-1]


class EdgeStereo(Module):
    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        w = config.backbone_widths
        self.backbone = Backbone(w, config.backbone_depths, rng)
        self.edge_net = EdgeNet(w, config.backbone_depths, config.side_channels, rng)
        feat_c = w[2]
        self.reduce = ConvReLU(feat_c, config.reduced_channels, 3, rng)
        edge_c = self.edge_net.feature_channels if config.use_edge_cues else 0
        self.mix = ConvReLU(config.reduced_channels + config.max_disp + 1 + edge_c,
                            config.mixed_channels, 1, rng)
        self.context = ContextPyramid(config.pyramid_config, config.mixed_channels, rng)
        self.decoder = ResidualPyramid(
            self.context.out_channels, list(w[:2]), config.scales, config.encoder_base,
            config.encoder_cap, config.est_width, edge_c, config.use_edge_cues, rng)
        self._groups = {
            BACKBONE: ParamGroup(BACKBONE, self.backbone.parameters()),
            EDGE: ParamGroup(EDGE, self.edge_net.parameters()),
            DISPARITY: ParamGroup(DISPARITY, self.reduce.parameters() + self.mix.parameters()
                                  + self.context.parameters() + self.decoder.parameters()),
        }

    @property
    def groups(self) -> dict[str, ParamGroup]:
        return self._groups

    def check_input(self, left, right) -> None:
        if left.shape != right.shape or len(left.shape) != 4 or left.shape[1] != 3:
            raise ValueError(f"expected two [B, 3, H, W] images, got {left.shape} and {right.shape}")
        h, w = left.shape[-2:]
        d = self.config.divisor
        if h % d or w % d:
            raise ValueError(f"image extents {h}x{w} must be divisible by {d}")

    def edges(self, left, taps=None) -> EdgeOutput:
        left = constant(left)
        return self.edge_net(left, taps if taps is not None else self.backbone(left))

    def __call__(self, left, right, with_edges: bool | None = None) -> ModelOutput:
        left, right = constant(left), constant(right)
        self.check_input(left, right)
        cfg = self.config
        taps_l = self.backbone(left)
        feat_r = self.backbone(right)[-1]
        feat_l = taps_l[-1]
        if cfg.max_disp >= feat_l.shape[-1]:
            raise ValueError(f"max_disp {cfg.max_disp} too large for feature width {feat_l.shape[-1]}")
        cost = correlation1d(feat_l, feat_r, cfg.max_disp)
        parts = [self.reduce(feat_l), cost]
        edge = None
        if cfg.use_edge_cues or with_edges:
            edge = self.edges(left, taps_l)
        edge_feat = edge_map = None
        if cfg.use_edge_cues:
            h, w = feat_l.shape[-2:]
            parts.append(ops.bilinear_resize(edge.edge_feature, h, w))
            edge_feat, edge_map = edge.edge_feature, edge.edge_map
        fm = self.mix(ops.concat_channels(parts))
        prior = self.context(fm)
        pyr = self.decoder(prior, taps_l, edge_feat, edge_map, left, right)
        return ModelOutput(pyr, edge)
