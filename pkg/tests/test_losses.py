import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from edgestereo import ops
from edgestereo.autodiff import constant
from edgestereo.losses import (deep_supervision, downsample_ground_truth,
                               edge_aware_smoothness, evaluate, regression_loss)


def img(values):
    return np.asarray(values, dtype=np.float64).reshape(1, 1, *np.shape(values)) \
        if np.ndim(values) == 2 else np.asarray(values, dtype=np.float64).reshape(1, 1, 1, -1)


def test_regression_identical_maps(rng):
    d = rng.uniform(size=(1, 1, 3, 3))
    assert regression_loss(d, d).value == 0


def test_regression_worked_examples():
    d, gt = img([1, 2, 3]), img([2, 2, 5])
    assert regression_loss(d, gt).value == pytest.approx(1.0, abs=1e-6)
    assert regression_loss(d, gt, img([1, 1, 0]).astype(bool)).value == pytest.approx(0.5, abs=1e-6)


def test_regression_empty_mask():
    with pytest.raises(ValueError):
        regression_loss(img([1.0]), img([1.0]), np.zeros((1, 1, 1, 1), bool))


def test_smoothness_worked_examples():
    d = img([[0, 1], [0, 1]])
    assert edge_aware_smoothness(d, np.zeros_like(d)).value == pytest.approx(0.5, abs=1e-6)
    e = img([[0, np.log(2)], [0, np.log(2)]])
    assert edge_aware_smoothness(d, e).value == pytest.approx(0.25, abs=1e-6)


def test_smoothness_of_constant_is_zero(rng):
    assert edge_aware_smoothness(np.full((1, 1, 4, 4), 3.0), rng.uniform(size=(1, 1, 4, 4))).value == 0


@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_smoothness_matches_oracle_and_ignores_edge_offset(seed, offset):
    rng = np.random.default_rng(seed)
    d, e = rng.normal(size=(2, 1, 4, 5)), rng.uniform(size=(2, 1, 4, 5))
    value = edge_aware_smoothness(d, e).value
    assert value == pytest.approx(oracles.smoothness(d, e), rel=1e-10)
    assert edge_aware_smoothness(d, e + offset).value == pytest.approx(value, rel=1e-10)


def test_ground_truth_downsampling_halves_values_and_erodes_mask():
    gt = np.arange(16.0).reshape(1, 1, 4, 4)
    valid = np.ones_like(gt, bool)
    valid[0, 0, 0, 0] = False
    g1, v1 = downsample_ground_truth(gt, valid, 1)
    assert g1[0, 0, 1, 1] == pytest.approx((10 + 11 + 14 + 15) / 4 / 2)
    assert v1[0, 0].tolist() == [[False, True], [True, True]]


def test_single_map_phase_three_is_regression():
    d, gt = img([[1.0, 2.0]]), img([[0.0, 0.0]])
    bd = deep_supervision([constant(d)], gt, np.ones_like(gt, bool), phase=3)
    assert bd.value == regression_loss(d, gt).value


def test_perfect_two_scale_prediction_is_zero(rng):
    gt = rng.uniform(0, 4, size=(1, 1, 4, 8))
    valid = np.ones_like(gt, bool)
    coarse, _ = downsample_ground_truth(gt, valid, 1)
    assert deep_supervision([constant(coarse), constant(gt)], gt, valid, phase=3).value == 0


def test_phase_two_hand_sum(rng):
    gt = rng.uniform(0, 4, size=(1, 1, 4, 8))
    valid = rng.uniform(size=gt.shape) > 0.1
    maps = [constant(rng.uniform(0, 4, size=(1, 1, 2, 4))), constant(rng.uniform(0, 4, size=gt.shape))]
    edge = rng.uniform(size=gt.shape)
    bd = deep_supervision(maps, gt, valid, edge, lambda_ds=0.1, phase=2)
    expected = 0.0
    for octaves, m in zip((1, 0), maps):
        g, v = downsample_ground_truth(gt, valid, octaves)
        e = ops.bilinear_resize(edge, *m.shape[-2:]).value
        expected += regression_loss(m, g, v).value + 0.1 * oracles.smoothness(m.value, e)
    assert bd.value == pytest.approx(expected, rel=1e-12)
    assert bd.total.value == bd.parts_sum()


@given(st.integers(0, 10_000))
def test_total_is_bitwise_sum_of_parts(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0, 8, size=(2, 1, 8, 16)).astype(np.float32)
    valid = np.ones(gt.shape, bool)
    valid[0] = rng.uniform(size=gt.shape[1:]) > 0.2  # the second sample keeps every scale valid
    maps = [constant(rng.uniform(0, 8, size=(2, 1, 8 >> k, 16 >> k)).astype(np.float32))
            for k in (3, 2, 1, 0)]
    bd = deep_supervision(maps, gt, valid, rng.uniform(size=gt.shape).astype(np.float32))
    assert bd.total.value == bd.parts_sum()


def test_phase_three_has_zero_smoothness_weight(rng):
    gt = rng.uniform(size=(1, 1, 4, 4))
    bd = deep_supervision([constant(rng.uniform(size=gt.shape))], gt, None,
                          rng.uniform(size=gt.shape), phase=3)
    assert bd.smooth_weight == 0.0
    assert bd.smoothness == [0.0]
    assert bd.per_scale == bd.regression


def test_evaluate_examples():
    gt = np.zeros((1, 1, 1, 2))
    report = evaluate(np.array([1.0, 4.0]).reshape(gt.shape), gt, thresholds=(3.0,))
    assert report.epe == 2.5 and report.bad[3.0] == 0.5
    perfect = evaluate(gt, gt)
    assert perfect.epe == 0 and perfect.bad[3.0] == 0
    assert "epe: 0.000" in perfect.to_text() and "bad_3: 0.0%" in perfect.to_text()


@given(arrays(np.float64, 12, elements=st.floats(0, 20)), arrays(np.float64, 12, elements=st.floats(0, 20)))
def test_bad_rates_are_monotone(pred, gt):
    r = evaluate(pred, gt)
    assert r.bad[1.0] >= r.bad[3.0] >= r.bad[5.0]
    assert r.epe == pytest.approx(np.abs(pred - gt).mean())


def test_evaluate_empty_mask():
    with pytest.raises(ValueError):
        evaluate(np.zeros(3), np.zeros(3), np.zeros(3, bool))
