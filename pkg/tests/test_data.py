import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgestereo.data import (StereoBatch, disparity_edges, generate_dataset, generate_stereogram,
                             load_dataset, save_dataset)
from edgestereo.stereo_ops import warp_right_to_left


def warp_consistent(s):
    warped = warp_right_to_left(s.right[None].astype(np.float64),
                                s.gt_disparity[None].astype(np.float64)).value[0]
    err = np.abs(warped - s.left).max(axis=0)
    return err[s.valid_mask[0]].max(initial=0.0)


def test_background_only_scene():
    s = generate_stereogram(0, 16, 32, 4, 0)
    assert np.array_equal(s.left, s.right)
    assert not s.gt_disparity.any() and not s.gt_edges.any() and s.valid_mask.all()


def test_single_layer_passes_warp_oracle():
    s = generate_stereogram(3, 32, 64, 4, 1, background_disp=0)
    assert set(np.unique(s.gt_disparity)) <= {0.0, 1.0, 2.0, 3.0, 4.0}
    assert warp_consistent(s) <= 1e-6


@given(st.integers(0, 2 ** 31))
def test_any_seed_passes_warp_oracle(seed):
    s = generate_dataset(1, seed)[0]
    assert warp_consistent(s) <= 1e-6


def test_fixed_seed_is_bit_identical():
    a, b = generate_stereogram(9, 16, 32, 6, 2), generate_stereogram(9, 16, 32, 6, 2)
    for f in ("left", "right", "gt_disparity", "valid_mask", "gt_edges"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


@given(st.integers(0, 10_000))
def test_occlusion_band_matches_layer_disparity(seed):
    s = generate_stereogram(seed, 24, 48, 8, 1)
    disp, valid = s.gt_disparity[0], s.valid_mask[0]
    d = int(disp.max())
    for y in range(disp.shape[0]):
        cols = np.flatnonzero(disp[y] == d)
        expected = np.zeros(disp.shape[1], bool)
        if len(cols):
            xl, xr = cols[0], cols[-1] + 1
            # background hidden behind the layer; d wide unless the run is narrower than d
            expected[max(xl - d, 0):max(min(xl, xr - d), 0)] = True
            expected[cols[cols < d]] = True       # layer pixels that leave the right view
        assert np.array_equal(~valid[y], expected)


def test_edges_mark_disparity_steps():
    d = np.zeros((1, 3, 4))
    d[..., 2:] = 3
    e = disparity_edges(d)[0]
    assert e[:, 1].all() and e.sum() == 3
    s = generate_stereogram(1, 16, 32, 6, 2)
    assert np.array_equal(s.gt_edges, disparity_edges(s.gt_disparity))


@pytest.mark.parametrize("kwargs", [dict(d_max=8), dict(n_layers=-1), dict(n_layers=5, d_max=4),
                                    dict(texture="plaid")])
def test_parameter_bounds(kwargs):
    args = dict(seed=0, height=16, width=32, d_max=4, n_layers=1) | kwargs
    with pytest.raises(ValueError):
        generate_stereogram(**args)


def test_dataset_ranges_and_batching():
    samples = generate_dataset(6, 0, d_max=8)
    for s in samples:
        assert s.left.shape == (3, 32, 64) and 0 <= s.gt_disparity.min()
        assert s.gt_disparity.max() <= 8 and s.left.min() >= 0 and s.left.max() <= 1
    assert StereoBatch.stack(samples).gt.shape == (6, 1, 32, 64)


def test_random_dot_texture():
    s = generate_stereogram(2, 16, 32, 4, 2, texture="random-dot")
    assert warp_consistent(s) <= 1e-6


def test_dataset_disk_round_trip(tmp_path):
    samples = generate_dataset(3, 4, height=16, width=32, d_max=4)
    save_dataset(tmp_path, samples)
    loaded = load_dataset(tmp_path)
    for a, b in zip(samples, loaded):
        assert np.array_equal(a.gt_disparity, b.gt_disparity)
        assert np.array_equal(a.valid_mask, b.valid_mask)
        assert np.array_equal(a.gt_edges, b.gt_edges)
        assert np.abs(a.left - b.left).max() <= 0.5 / 255 + 1e-6
