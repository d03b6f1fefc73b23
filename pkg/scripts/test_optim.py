#!/usr/bin/env python3
"""
Optimizer tests: one-cycle schedule, Adam with decoupled weight decay and the
training loop
"""

import os
import sys

import numpy as np
import pytest

# Add the project root to Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from DiversityLearning.sdl_errors import SDLNumericError, SDLValidationError
from DiversityLearning.sdl_optim import (
    OneCycleSchedule, OptimState, TrainConfig, adam_step, lr_at, train, write_training_log,
)
from DiversityLearning.sdl_synth import SynthConfig, generate
from utility.json_io import read_jsonl


# ==================== SCHEDULE ====================

def test_one_cycle_landmarks():
    schedule = OneCycleSchedule(max_lr=1e-3, total_steps=100)
    assert lr_at(schedule, 0) == pytest.approx(1e-3 / 25)
    assert lr_at(schedule, 30) == pytest.approx(1e-3)
    assert lr_at(schedule, 100) == pytest.approx(1e-3 / 1e4)


def test_one_cycle_shape():
    schedule = OneCycleSchedule(max_lr=1.0, total_steps=50)
    rates = [lr_at(schedule, t) for t in range(51)]
    peak = int(np.argmax(rates))
    assert peak == 15
    assert all(a <= b for a, b in zip(rates[:peak], rates[1:peak + 1]))
    assert all(a >= b for a, b in zip(rates[peak:], rates[peak + 1:]))
    # continuous around the peak
    assert abs(lr_at(schedule, 15.001) - lr_at(schedule, 14.999)) < 1e-3


def test_schedule_rejects_out_of_range_steps():
    schedule = OneCycleSchedule(max_lr=1.0, total_steps=10)
    with pytest.raises(SDLValidationError):
        lr_at(schedule, 11)
    with pytest.raises(SDLValidationError):
        lr_at(schedule, -1)


# ==================== ADAM ====================

def _reference_adam(p, grads, lr, wd, beta1=0.9, beta2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        p = p * (1 - lr * wd)
        p = p - lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)
    return p


def test_adam_matches_reference_updates():
    rng = np.random.default_rng(0)
    p0 = rng.normal(size=(3, 4))
    grads = [rng.normal(size=(3, 4)) for _ in range(5)]
    state = OptimState(schedule=OneCycleSchedule(max_lr=0.01, total_steps=10), weight_decay=0.01)

    params = {"W": p0.copy()}
    for g in grads:
        params, state = adam_step(state, params, {"W": g}, lr=0.01)

    np.testing.assert_allclose(params["W"], _reference_adam(p0, grads, 0.01, 0.01), rtol=0, atol=1e-12)
    assert state.step == 5


def test_weight_decay_is_decoupled():
    p = {"W": np.array([2.0, -4.0])}
    state = OptimState(schedule=OneCycleSchedule(max_lr=0.1, total_steps=10), weight_decay=0.5)
    new, _ = adam_step(state, p, {"W": np.zeros(2)}, lr=0.1)
    np.testing.assert_allclose(new["W"], [2.0 * 0.95, -4.0 * 0.95], rtol=1e-15)


def test_adam_does_not_modify_inputs_and_keeps_dtype():
    p = {"W": np.ones(3, dtype=np.float32)}
    g = {"W": np.full(3, 0.5, dtype=np.float32)}
    state = OptimState(schedule=OneCycleSchedule(max_lr=0.1, total_steps=10))
    new, new_state = adam_step(state, p, g)
    assert new["W"].dtype == np.float32
    np.testing.assert_array_equal(p["W"], [1.0, 1.0, 1.0])
    assert state.step == 0 and new_state.step == 1
    assert not state.m


def test_adam_rejects_non_finite_gradients():
    state = OptimState(schedule=OneCycleSchedule(max_lr=0.1, total_steps=10))
    with pytest.raises(SDLNumericError):
        adam_step(state, {"W": np.ones(2)}, {"W": np.array([np.nan, 1.0])})


# ==================== TRAINING ====================

@pytest.fixture(scope="module")
def small_world():
    cfg = SynthConfig(d_w=8, d_f=16, groups=2, labels_per_group=6, unseen_per_group=2,
                      n_images=160, labels_per_image=(1, 3), diversity_mix=0.5, seed=0)
    return generate(cfg)


def test_train_log_and_determinism(small_world):
    table, dataset = small_world
    cfg = TrainConfig(epochs=3, batch_size=8, max_lr=1e-2, M=2, seed=4)
    params, log = train(dataset, table, cfg)
    again, log_again = train(dataset, table, cfg)

    assert params.W.dtype == np.float32
    assert (params.M, params.d_w, params.d_f) == (2, 8, 16)
    assert params.W.tobytes() == again.W.tobytes()
    assert log == log_again
    assert [r["epoch"] for r in log] == [1, 2, 3]
    assert set(log[0]) == {"epoch", "mean_loss", "mean_l_rank", "mean_l_reg", "mean_omega_d", "lr", "skipped_samples"}
    assert all(r["mean_omega_d"] >= 1.0 for r in log)


def test_train_is_thread_count_independent(small_world):
    table, dataset = small_world
    cfg = TrainConfig(epochs=2, batch_size=16, max_lr=1e-2, M=3, seed=1)
    single, _ = train(dataset, table, cfg, threads=1)
    pooled, _ = train(dataset, table, cfg, threads=3)
    assert single.W.tobytes() == pooled.W.tobytes()
    assert single.b.tobytes() == pooled.b.tobytes()


def test_train_loss_decreases(small_world):
    table, dataset = small_world
    _, log = train(dataset, table, TrainConfig(epochs=6, batch_size=8, max_lr=1e-2, M=2, lam=0.3))
    assert log[-1]["mean_loss"] < log[0]["mean_loss"]


def test_fast0tag_matches_single_row_max(small_world):
    table, dataset = small_world
    _, log_fast = train(dataset, table, TrainConfig(epochs=2, M=1, lam=0.0, variant="fast0tag"))
    _, log_max = train(dataset, table, TrainConfig(epochs=2, M=1, lam=0.0, variant="max"))
    assert log_fast == log_max


def test_train_counts_skipped_samples(small_world):
    table, dataset = small_world
    # an image whose labels are all unseen has no positives in the training view
    unseen_only = sorted(dataset.unseen)[:1]
    labels = [frozenset(unseen_only)] + dataset.labels[1:]
    patched = type(dataset)(features=dataset.features, ids=dataset.ids, labels=labels,
                            seen=dataset.seen, unseen=dataset.unseen)
    _, log = train(patched, table, TrainConfig(epochs=1, M=2))
    assert log[0]["skipped_samples"] >= 1


def test_train_rejects_empty_and_untrainable_sets(small_world):
    table, dataset = small_world
    with pytest.raises(SDLValidationError):
        train(dataset.subset([]), table, TrainConfig(epochs=1))
    empty_labels = type(dataset)(features=dataset.features, ids=dataset.ids,
                                 labels=[frozenset()] * len(dataset), seen=dataset.seen,
                                 unseen=dataset.unseen)
    with pytest.raises(SDLValidationError):
        train(empty_labels, table, TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(SDLValidationError):
        TrainConfig(variant="fast0tag", M=7)
    with pytest.raises(SDLValidationError):
        TrainConfig(epochs=0)
    with pytest.raises(SDLValidationError):
        TrainConfig.from_dict({"epochs": 2, "momentum": 0.9})
    assert TrainConfig.from_dict({"epochs": 2}).epochs == 2


def test_training_log_is_json_lines(tmp_path):
    log = [{"epoch": 1, "mean_loss": 0.5}, {"epoch": 2, "mean_loss": 0.25}]
    path = str(tmp_path / "log.jsonl")
    write_training_log(log, path)
    assert read_jsonl(path) == log
