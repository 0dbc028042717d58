import pytest

from edgestereo.gradcheck import CHECKS, TOLERANCE, format_table, run_check, run_suite

REQUIRED = {"conv2d", "avg_pool", "adaptive_avg_pool", "bilinear_resize", "correlation1d",
            "warp_right_to_left", "error_map", "compose_disparity", "spatial_gradients",
            "regression_loss", "edge_aware_smoothness", "class_balanced_bce", "estimation_block"}


def test_registry_covers_required_operators():
    assert REQUIRED <= {c.name for c in CHECKS}


@pytest.mark.parametrize("check", CHECKS, ids=lambda c: c.name)
def test_operator_gradient(check):
    result = run_check(check, instances=5)
    assert result.max_error < TOLERANCE, f"{check.name}: {result.max_error:.2e}"


def test_table_lists_every_row():
    results = run_suite(instances=1, names={"relu", "sigmoid"})
    table = format_table(results)
    assert "relu" in table and "sigmoid" in table and table.count("PASS") == 2
