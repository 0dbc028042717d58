"""Registry of finite-difference checks over every differentiable operator.

Each entry draws a random small instance in float64, keeping inputs away
from kinks (ReLU/abs zeros, clamp boundaries, integer warp positions) by a
wide margin relative to the finite-difference step.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .autodiff import grad_check, precision
from .context_pyramid import ContextPyramidConfig, build_context_branch
from .edge_net import class_balanced_bce
from .losses import edge_aware_smoothness, regression_loss
from .residual_pyramid import EstimationBlock
from .stereo_ops import (compose_disparity, correlation1d, error_map, spatial_gradients,
                         warp_right_to_left)

TOLERANCE = 1e-4
EPS = 1e-5


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def _randomise(module, rng):
    # zero biases can leave a ReLU input exactly at 0 (all-dead receptive field)
    for p in module.parameters():
        p.value = rng.normal(scale=0.5, size=p.shape)
    return module


def _fixed_weights(rng, fn):
    """Wrap ``fn`` so the random scalarisation weights are drawn once."""
    cache = {}

    def f(*xs):
        out = fn(*xs)
        if "w" not in cache:
            cache["w"] = rng.normal(size=out.shape)
        return ops.reduce_sum(ops.mul(out, cache["w"]))

    return f


def _conv(rng):
    B, C, K = (int(v) for v in rng.integers(1, 4, size=3))
    k = int(rng.integers(1, 4))
    stride, dil = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    H = W = dil * (k - 1) + 1 + int(rng.integers(1, 4))
    x = rng.normal(size=(B, C, H, W))
    w = rng.normal(size=(K, C, k, k))
    b = rng.normal(size=K)
    fn = _fixed_weights(rng, lambda x, w, b: ops.conv2d(x, w, b, stride=stride, pad=pad,
                                                        dilation=dil))
    return fn, [x, w, b]


def _relu(rng):
    x = _away_from_zero(rng, (2, 3, 4, 4))
    return _fixed_weights(rng, ops.relu), [x]


def _avg_pool(rng):
    k = int(rng.integers(2, 4))
    s = int(rng.integers(1, k + 1))
    x = rng.normal(size=(2, 2, 7, 8))
    return _fixed_weights(rng, lambda x: ops.avg_pool(x, k, s)), [x]


def _adaptive_pool(rng):
    oh, ow = (int(v) for v in rng.integers(1, 6, size=2))
    x = rng.normal(size=(1, 2, 6, 7))
    return _fixed_weights(rng, lambda x: ops.adaptive_avg_pool(x, oh, ow)), [x]


def _resize(rng):
    oh, ow = (int(v) for v in rng.integers(1, 12, size=2))
    x = rng.normal(size=(1, 2, int(rng.integers(1, 7)), int(rng.integers(1, 7))))
    return _fixed_weights(rng, lambda x: ops.bilinear_resize(x, oh, ow)), [x]


def _concat(rng):
    xs = [rng.normal(size=(2, int(rng.integers(1, 4)), 3, 4)) for _ in range(3)]
    return _fixed_weights(rng, lambda *xs: ops.concat_channels(xs)), xs


def _elementwise(rng):
    a = _away_from_zero(rng, (2, 3, 3))
    b = rng.normal(size=(2, 3, 3))

    def fn(a, b):
        return ops.add(ops.mul(ops.exp(ops.scale(b, 0.5)), ops.abs_(a)), ops.sub(ops.neg(a), b))

    return _fixed_weights(rng, fn), [a, b]


def _sigmoid(rng):
    return _fixed_weights(rng, ops.sigmoid), [rng.normal(scale=3.0, size=(2, 1, 4, 4))]


def _reduce_mean(rng):
    return (lambda x: ops.reduce_mean(ops.mul(x, x))), [rng.normal(size=(2, 3))]


def _correlation(rng):
    C, H, W = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(3, 8))
    D = int(rng.integers(0, W))
    fl, fr = rng.normal(size=(2, C, H, W)), rng.normal(size=(2, C, H, W))
    return _fixed_weights(rng, lambda a, b: correlation1d(a, b, D)), [fl, fr]


def _warp(rng):
    C, h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(3, 8))
    right = rng.normal(size=(2, C, h, w))
    disp = rng.integers(0, w, size=(2, 1, h, w)) + rng.uniform(0.1, 0.9, size=(2, 1, h, w))
    return _fixed_weights(rng, warp_right_to_left), [right, disp]


def _error_map(rng):
    left = rng.normal(size=(1, 3, 4, 5))
    synth = left + _away_from_zero(rng, left.shape)
    return _fixed_weights(rng, error_map), [left, synth]


def _compose(rng):
    h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    coarse = rng.uniform(0.0, 3.0, size=(2, 1, h, w))
    up = 2 * ops.bilinear_resize(coarse, 2 * h, 2 * w).value
    target = _away_from_zero(rng, up.shape, margin=0.1)
    residual = target - up
    return _fixed_weights(rng, compose_disparity), [coarse, residual]


def _spatial_gradients(rng):
    x = rng.normal(size=(2, 1, 4, 5))
    wx = rng.normal(size=x.shape)
    wy = rng.normal(size=x.shape)

    def f(x):
        gx, gy = spatial_gradients(x)
        return ops.add(ops.reduce_sum(ops.mul(gx, wx)), ops.reduce_sum(ops.mul(gy, wy)))

    return f, [x]


def _regression(rng):
    gt = rng.uniform(0, 5, size=(2, 1, 4, 6))
    d = gt + _away_from_zero(rng, gt.shape)
    valid = rng.uniform(size=gt.shape) < 0.8
    valid.flat[0] = True
    return (lambda d: regression_loss(d, gt, valid)), [d]


def _smoothness(rng):
    d = rng.normal(size=(2, 1, 5, 6))
    e = rng.uniform(size=d.shape)
    return (lambda d: edge_aware_smoothness(d, e)), [d]


def _bce(rng):
    pred = rng.uniform(0.05, 0.95, size=(2, 1, 4, 4))
    label = (rng.uniform(size=pred.shape) < 0.3).astype(np.float64)
    label.flat[0], label.flat[1] = 1.0, 0.0
    return (lambda p: class_balanced_bce(p, label)), [pred]


def _estimation_block(rng):
    with precision(np.float64):
        block = _randomise(EstimationBlock(3, 4, rng), rng)
    agg = rng.normal(size=(1, 3, 4, 5))
    return _fixed_weights(rng, lambda x, *_: block(x)), [agg] + block.parameters()


def _context_branch(rng):
    notation = ("C-7_5_3_1", "P-1_2_3_4", "D-6_3_2_1")[int(rng.integers(0, 3))]
    with precision(np.float64):
        branch = _randomise(build_context_branch(ContextPyramidConfig.parse(notation, 2),
                                                 int(rng.integers(0, 4)), 3, rng), rng)
    x = rng.normal(size=(1, 3, 6, 6))
    return _fixed_weights(rng, lambda x, *_: branch(x)), [x] + branch.parameters()


@dataclass(frozen=True)
class Check:
    name: str
    build: Callable


CHECKS = [
    Check("conv2d", _conv),
    Check("relu", _relu),
    Check("avg_pool", _avg_pool),
    Check("adaptive_avg_pool", _adaptive_pool),
    Check("bilinear_resize", _resize),
    Check("concat_channels", _concat),
    Check("elementwise", _elementwise),
    Check("sigmoid", _sigmoid),
    Check("reduce_mean", _reduce_mean),
    Check("correlation1d", _correlation),
    Check("warp_right_to_left", _warp),
    Check("error_map", _error_map),
    Check("compose_disparity", _compose),
    Check("spatial_gradients", _spatial_gradients),
    Check("regression_loss", _regression),
    Check("edge_aware_smoothness", _smoothness),
    Check("class_balanced_bce", _bce),
    Check("estimation_block", _estimation_block),
    Check("context_branch", _context_branch),
]


@dataclass
class CheckResult:
    name: str
    instances: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def run_check(check: Check, instances: int = 5, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng([seed, sum(map(ord, check.name))])
    worst = 0.0
    for _ in range(instances):
        f, inputs = check.build(rng)
        worst = max(worst, grad_check(f, inputs, EPS))
    return CheckResult(check.name, instances, worst)


def run_suite(instances: int = 5, seed: int = 0, names=None) -> list[CheckResult]:
    chosen = [c for c in CHECKS if names is None or c.name in names]
    return [run_check(c, instances, seed) for c in chosen]


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'operator':<{width}}  instances  max_rel_error  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.instances:>9}  {r.max_error:>13.2e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
