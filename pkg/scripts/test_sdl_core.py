#!/usr/bin/env python3
"""
Loss mathematics tests: scoring, SDW, ranking loss, row-variance regularizer
and their closed-form invariants
"""

import math
import os
import sys

import numpy as np
import pytest

# Add the project root to Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from DiversityLearning.sdl_core import (
    LabelInstance, LossConfig, effective_lambda, final_loss, pair_margin, rank_loss,
    reg_loss, score, score_many, sdw, softplus,
)
from DiversityLearning.sdl_errors import SDLValidationError
from DiversityLearning.sdl_gradcheck import central_difference, relative_error


def _unit(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _instance(seed=0, M=3, d_w=8, n_pos=3, n_neg=6):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(M, d_w)), LabelInstance(_unit(rng, n_pos, d_w), _unit(rng, n_neg, d_w))


# ==================== SCORING ====================

def test_score_takes_max_row():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    value, row = score(A, [0.6, 0.8])
    assert value == 0.8
    assert row == 1


def test_score_ties_go_to_lowest_row():
    A = np.array([[1.0, 0.0], [1.0, 0.0]])
    _, row = score(A, [1.0, 0.0])
    assert row == 0


def test_l2norm_score_is_norm_of_products():
    A = np.array([[3.0, 0.0], [0.0, 4.0]])
    value, _ = score(A, [1 / np.sqrt(2), 1 / np.sqrt(2)], variant="l2norm")
    assert abs(value - 5 / np.sqrt(2)) < 1e-12


def test_score_many_matches_single_calls():
    A, inst = _instance(1)
    values, rows = score_many(A, inst.negatives)
    for t, v, r in zip(inst.negatives, values, rows):
        single, single_row = score(A, t)
        assert r == single_row
        assert v == pytest.approx(single, rel=1e-12, abs=1e-15)


def test_pair_margin():
    A = np.array([[1.0, 0.0]])
    assert pair_margin(A, [1.0, 0.0], [0.0, 1.0]) == -1.0


def test_score_rejects_dimension_mismatch():
    with pytest.raises(SDLValidationError):
        score(np.ones((2, 3)), [1.0, 0.0])


# ==================== SDW ====================

def test_sdw_single_positive_is_one():
    assert sdw(np.array([[0.3, -0.2, 0.9]])) == 1.0


def test_sdw_opposite_pair_is_two():
    assert sdw(np.array([[1.0, 0.0], [-1.0, 0.0]])) == 2.0


def test_sdw_identical_positives_is_one():
    assert sdw(np.array([[0.6, 0.8], [0.6, 0.8]])) == 1.0


# ==================== RANKING LOSS ====================

def test_single_pair_at_zero_margin_is_ln2():
    A = np.array([[1.0, 0.0]])
    inst = LabelInstance(np.array([[0.0, 1.0]]), np.array([[0.0, -1.0]]))
    value, _ = rank_loss(A, inst)
    assert abs(value - math.log(2.0)) <= 1e-12


def test_max_gradient_routes_to_argmax_rows():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    inst = LabelInstance(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    _, grad = rank_loss(A, inst)
    np.testing.assert_array_equal(grad, [[-0.5, 0.0], [0.0, 0.5]])


def test_pair_replication_invariance():
    A, inst = _instance(2, n_pos=2, n_neg=4)
    doubled = LabelInstance(np.vstack([inst.positives, inst.positives]),
                            np.vstack([inst.negatives, inst.negatives]))
    v1, g1 = rank_loss(A, inst)
    v2, g2 = rank_loss(A, doubled)
    assert abs(v1 - v2) <= 1e-10
    np.testing.assert_allclose(g1, g2, atol=1e-10)


@pytest.mark.parametrize("variant", ["max", "l2norm"])
def test_row_permutation_invariance(variant):
    A, inst = _instance(3, M=4)
    perm = np.array([2, 0, 3, 1])
    cfg = LossConfig(variant=variant, lam=0.3, M=4)
    out = final_loss(A, inst, cfg)
    permuted = final_loss(A[perm], inst, cfg)
    assert abs(out.value - permuted.value) <= 1e-10
    np.testing.assert_allclose(permuted.grad_A, out.grad_A[perm], atol=1e-10)


def test_sdw_switch_scales_loss():
    A, inst = _instance(4)
    with_sdw, _ = rank_loss(A, inst, use_sdw=True)
    without, _ = rank_loss(A, inst, use_sdw=False)
    assert abs(with_sdw - sdw(inst.positives) * without) <= 1e-10


def test_fast0tag_matches_max_with_one_row():
    A, inst = _instance(5, M=1)
    a = final_loss(A, inst, LossConfig(variant="fast0tag", lam=0.0, M=1))
    b = final_loss(A, inst, LossConfig(variant="max", lam=0.0, M=1))
    assert a.value == b.value
    np.testing.assert_array_equal(a.grad_A, b.grad_A)


def test_softplus_is_overflow_safe():
    assert softplus(1000.0) == 1000.0
    assert 0.0 <= softplus(-1000.0) < 1e-300
    assert abs(softplus(0.0) - math.log(2.0)) < 1e-15


@pytest.mark.parametrize("variant,M", [("max", 3), ("l2norm", 3), ("fast0tag", 1)])
def test_rank_gradient_matches_finite_differences(variant, M):
    A, inst = _instance(6, M=M)
    _, grad = rank_loss(A, inst, variant=variant)
    numeric = central_difference(lambda X: rank_loss(X, inst, variant=variant)[0], A)
    assert relative_error(grad, numeric) < 1e-6


def test_label_instance_needs_positives_and_negatives():
    with pytest.raises(SDLValidationError):
        LabelInstance(np.zeros((0, 2)), np.ones((1, 2)))
    with pytest.raises(SDLValidationError):
        LabelInstance(np.ones((1, 2)), np.ones((1, 3)))


def _loss_along(raise_positive, steps, use_sdw):
    A = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    values = []
    for x in steps:
        moving = np.array([[x, 0.1, 0.0]])
        fixed = np.array([[0.1, 0.5, 0.7]])
        others = np.array([[0.4, 0.1, 0.3], [0.0, 0.6, 0.2]])
        if raise_positive:
            inst = LabelInstance(np.vstack([moving, fixed]), others)
        else:
            inst = LabelInstance(fixed, np.vstack([moving, others]))
        values.append(rank_loss(A, inst, use_sdw=use_sdw)[0])
    return np.array(values)


def test_raising_a_positive_score_lowers_the_loss():
    # the moving label scores x on row 0 for every x above 0.1
    values = _loss_along(True, np.linspace(0.2, 2.0, 10), use_sdw=False)
    assert np.all(np.diff(values) < 0)


def test_raising_a_negative_score_raises_the_loss():
    values = _loss_along(False, np.linspace(0.2, 2.0, 10), use_sdw=True)
    assert np.all(np.diff(values) > 0)


# ==================== REGULARIZER ====================

def test_reg_zero_iff_rows_equal():
    value, grad = reg_loss(np.array([[0.5, -1.0], [0.5, -1.0], [0.5, -1.0]]))
    assert value == 0.0
    assert not grad.any()
    value, _ = reg_loss(np.array([[0.5, -1.0], [0.5, -0.9]]))
    assert value > 0.0


def test_reg_single_row_is_zero():
    value, grad = reg_loss(np.array([[1.0, 2.0, 3.0]]))
    assert value == 0.0
    assert grad.shape == (1, 3) and not grad.any()


def test_reg_closed_form():
    value, grad = reg_loss(np.array([[1.0, 0.0], [3.0, 0.0]]))
    assert value == 1.0
    np.testing.assert_array_equal(grad, [[-1.0, 0.0], [1.0, 0.0]])


def test_reg_translation_invariance():
    A, _ = _instance(7, M=5)
    shift = np.random.default_rng(8).normal(size=A.shape[1]) * 10
    v1, g1 = reg_loss(A)
    v2, g2 = reg_loss(A + shift)
    assert abs(v1 - v2) <= 1e-10
    np.testing.assert_allclose(g1, g2, atol=1e-10)


# ==================== FINAL LOSS ====================

def test_effective_lambda():
    assert effective_lambda(0.3, 3) == pytest.approx(0.1)
    assert effective_lambda(10.0, 2) == 1.0
    with pytest.raises(SDLValidationError):
        effective_lambda(0.3, 0)


def test_final_loss_blends_components():
    A, inst = _instance(9, n_neg=3)
    out = final_loss(A, inst, LossConfig(lam=0.3, M=3))
    lam_t = 0.1
    assert abs(out.value - ((1 - lam_t) * out.l_rank + lam_t * out.l_reg)) <= 1e-12
    assert out.omega_d == sdw(inst.positives)


def test_final_loss_lambda_zero_is_rank_loss():
    A, inst = _instance(10)
    out = final_loss(A, inst, LossConfig(lam=0.0, M=3))
    value, grad = rank_loss(A, inst)
    assert out.value == value
    np.testing.assert_array_equal(out.grad_A, grad)


def test_final_loss_checks_row_count():
    A, inst = _instance(11, M=2)
    with pytest.raises(SDLValidationError):
        final_loss(A, inst, LossConfig(M=3))


def test_loss_config_validation():
    with pytest.raises(SDLValidationError):
        LossConfig(variant="fast0tag", M=7)
    with pytest.raises(SDLValidationError):
        LossConfig(variant="mean")
    with pytest.raises(SDLValidationError):
        LossConfig(lam=-0.1)
