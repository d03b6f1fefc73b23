#!/usr/bin/env python3
"""
Gradient check tests: the finite-difference harness itself and a small
seeded run over every variant and suite
"""

import os
import sys
import time

import numpy as np
import pytest

# Add the project root to Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from DiversityLearning.sdl_core import LabelInstance
from DiversityLearning.sdl_errors import SDLValidationError
from DiversityLearning.sdl_gradcheck import (
    SUITES, GradcheckConfig, central_difference, gradcheck_summary, instance_grid, is_degenerate,
    relative_error, run_gradcheck,
)


def test_central_difference_on_quadratic():
    Q = np.array([[2.0, 1.0], [1.0, 3.0]])
    x = np.array([0.5, -1.5])
    numeric = central_difference(lambda v: 0.5 * v @ Q @ v, x)
    np.testing.assert_allclose(numeric, Q @ x, atol=1e-8)


def test_central_difference_leaves_input_untouched():
    x = np.array([[1.0, 2.0]])
    central_difference(lambda v: float(np.sum(v ** 3)), x)
    np.testing.assert_array_equal(x, [[1.0, 2.0]])


def test_relative_error():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error([1.0, 0.0], [-1.0, 0.0]) == 2.0
    assert relative_error([2.0], [2.0]) == 0.0


def test_tied_rows_are_degenerate():
    inst = LabelInstance(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    tied = np.array([[1.0, 0.0], [1.0, 0.5]])
    clear = np.array([[1.0, 0.0], [-1.0, 2.0]])
    assert is_degenerate(tied, inst, "max", 1e-4)
    assert not is_degenerate(clear, inst, "max", 1e-4)
    assert not is_degenerate(tied[:1], inst, "max", 1e-4)


def test_l2norm_zero_product_is_degenerate():
    inst = LabelInstance(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert is_degenerate(np.array([[0.0, 1.0]]), inst, "l2norm", 1e-4)


def test_grid_shapes():
    assert {M for M, _, _, _ in instance_grid("fast0tag")} == {1}
    assert {M for M, _, _, _ in instance_grid("max")} == {1, 3, 7}
    # row counts vary fastest
    assert [g[0] for g in instance_grid("max")[:3]] == [1, 3, 7]


@pytest.fixture(scope="module")
def small_run():
    return run_gradcheck(GradcheckConfig(n_instances=12, seed=0))


def test_small_run_passes_every_suite(small_run):
    assert small_run["passed"]
    assert small_run["max_rel_err"] < 1e-4
    assert set(small_run["suites"]) == {f"{v}/{s}" for v in ("max", "fast0tag", "l2norm") for s in SUITES}
    for name, suite in small_run["suites"].items():
        assert suite["checked"] + suite["excluded"] == 12, name


def test_run_is_deterministic(small_run):
    again = run_gradcheck(GradcheckConfig(n_instances=12, seed=0))
    assert again["suites"] == small_run["suites"]


def test_sign_flip_is_detected():
    result = run_gradcheck(GradcheckConfig(n_instances=6, variants=("max",)), corrupt=lambda g: -g)
    assert not result["passed"]
    assert not result["suites"]["max/rank"]["passed"]
    assert result["max_rel_err"] > 1.0


def test_summary_is_flat(small_run):
    summary = gradcheck_summary(small_run)
    assert summary["passed"] is True
    assert "l2norm/head" in summary


def test_config_validation():
    with pytest.raises(SDLValidationError):
        GradcheckConfig(variants=("mean",))
    with pytest.raises(SDLValidationError):
        GradcheckConfig(n_instances=0)


def test_sampled_central_difference_matches_full():
    x = np.array([[0.3, -1.2, 0.7], [2.0, 0.1, -0.4]])
    def f(v):
        return float(np.sum(np.sin(v) * v))

    full = central_difference(f, x)
    picked = central_difference(f, x, indices=np.array([1, 4, 5]))
    np.testing.assert_allclose(picked, full.ravel()[[1, 4, 5]], rtol=1e-12)


@pytest.mark.slow
def test_default_run_fits_time_budget():
    start = time.perf_counter()
    result = run_gradcheck()
    elapsed = time.perf_counter() - start
    assert result["passed"]
    assert elapsed < 30.0
