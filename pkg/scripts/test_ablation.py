#!/usr/bin/env python3
"""
Ablation runner and tracking tests on a tiny synthetic world, plus slow
five-seed runs on the standard and diverse fixtures
"""

import os
import sys
import time
import types

import pytest

# Add the project root to Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from DiversityLearning.sdl_ablation import (
    LAMBDA_SWEEP, M_SWEEP, AblationConfig, fixture_world, format_table, grid_cells, run_ablation,
)
from DiversityLearning.sdl_data import holdout_split
from DiversityLearning.sdl_errors import SDLValidationError
from DiversityLearning.sdl_synth import SynthConfig, generate
from DiversityLearning.sdl_tracking import RunTracker, metric_key


@pytest.fixture(scope="module")
def tiny_world():
    table, dataset = generate(SynthConfig(d_w=8, d_f=16, groups=2, labels_per_group=8, unseen_per_group=2,
                                          n_images=150, labels_per_image=(5, 9), diversity_mix=0.8, seed=1))
    train_set, test_set = holdout_split(dataset, 50, seed=1)
    return table, train_set, test_set


def _cfg(mode, **kwargs):
    return AblationConfig(mode=mode, seeds=1, epochs=1, batch_size=16, max_lr=1e-2, **kwargs)


def test_grid_cells_per_mode():
    table = grid_cells(AblationConfig(mode="table"))
    assert table[0].variant == "fast0tag" and table[0].M == 1 and not table[0].use_sdw
    assert [c.M for c in table[-2:]] == [3, 7]
    assert [c.M for c in grid_cells(AblationConfig(mode="m-sweep"))] == list(M_SWEEP)
    assert [c.lam for c in grid_cells(AblationConfig(mode="lambda-sweep"))] == list(LAMBDA_SWEEP)
    assert len(grid_cells(AblationConfig(mode="diverse"))) == 3


def test_config_validation():
    with pytest.raises(SDLValidationError):
        AblationConfig(mode="everything")
    with pytest.raises(SDLValidationError):
        AblationConfig(fixture="huge")
    with pytest.raises(SDLValidationError):
        AblationConfig(seeds=0)


def test_table_mode(tiny_world):
    result, table = run_ablation(_cfg("table"), world=tiny_world)
    assert len(table) == 9
    assert {"zsl_mAP", "gzsl_mAP"} <= set(table.columns)
    assert all(0.0 <= cell["zsl_mAP"] <= 1.0 for cell in result["cells"])
    assert result["fixture"] is None
    assert len(result["per_seed"]) == 9
    assert "baseline" in format_table(table)


def test_equal_row_counts_do_not_duplicate_cells(tiny_world):
    _, table = run_ablation(_cfg("table", m=7), world=tiny_world)
    assert len(table) == 8
    assert table["name"].is_unique


def test_lambda_sweep_reports_row_variance(tiny_world):
    result, table = run_ablation(_cfg("lambda-sweep", ks=(5,)), world=tiny_world)
    assert 3 in result["settings"]["ks"]
    assert list(table["lam"]) == list(LAMBDA_SWEEP)
    assert (table["mean_row_variance"] >= 0).all()


def test_diverse_mode(tiny_world):
    result, table = run_ablation(_cfg("diverse"), world=tiny_world)
    assert list(table["name"])[0] == "baseline"
    assert all(cell["diverse_images"] > 0 for cell in result["cells"])
    assert {"precision@10", "recall@10", "f1@10"} <= set(table.columns)


def test_seeds_are_averaged(tiny_world):
    result, table = run_ablation(AblationConfig(mode="diverse", seeds=2, epochs=1, batch_size=16), world=tiny_world)
    assert result["seeds"] == [0, 1]
    assert len(result["per_seed"]) == 6
    baseline = [r["f1@10"] for r in result["per_seed"] if r["cell"] == "baseline"]
    assert table.loc[table["name"] == "baseline", "f1@10"].iloc[0] == pytest.approx(sum(baseline) / 2)


def test_fixture_world_holds_out_test_images():
    table, train_set, test_set = fixture_world("standard", seed=0, overrides={"n_images": 100})
    assert len(train_set) == 80 and len(test_set) == 20
    assert len(table) == 60


# ==================== TRACKING ====================

def test_disabled_tracker_is_a_no_op():
    with RunTracker(enabled=False) as tracker:
        tracker.log_params({"a": 1})
        tracker.log_metrics({"b": 2.0})
        tracker.log_epoch({"epoch": 1, "mean_loss": 0.5})
    assert not tracker.enabled


def test_metric_keys_are_sanitized():
    assert metric_key("+sdw M=2 λ=0.1/zsl_mAP") == "_sdw M_2 λ_0.1/zsl_mAP"


def test_tracker_forwards_to_mlflow(monkeypatch):
    calls = []
    fake = types.SimpleNamespace(
        set_tracking_uri=lambda uri: calls.append(("uri", uri)),
        set_experiment=lambda name: calls.append(("experiment", name)),
        start_run=lambda run_name=None: calls.append(("start", run_name)),
        log_params=lambda params: calls.append(("params", params)),
        log_metrics=lambda metrics, step=None: calls.append(("metrics", metrics, step)),
        log_artifact=lambda path: calls.append(("artifact", path)),
        end_run=lambda: calls.append(("end",)),
    )
    monkeypatch.setitem(sys.modules, "mlflow", fake)
    monkeypatch.setenv("MLFLOW_TRACKING_URI", "file:///tmp/mlruns")

    with RunTracker(enabled=True, run_name="unit") as tracker:
        tracker.log_epoch({"epoch": 2, "mean_loss": 0.5, "skipped_samples": 1})

    assert ("uri", "file:///tmp/mlruns") in calls
    assert ("start", "unit") in calls
    assert ("metrics", {"mean_loss": 0.5, "skipped_samples": 1.0}, 2) in calls
    assert calls[-1] == ("end",)


def test_cells_narrow_the_grid(tiny_world):
    _, table = run_ablation(_cfg("table", cells=("baseline", "ours M=3")), world=tiny_world)
    assert list(table["name"]) == ["baseline", "ours M=3"]
    with pytest.raises(SDLValidationError):
        run_ablation(_cfg("table", cells=("ours M=4",)), world=tiny_world)


# ==================== STANDARD FIXTURE DIRECTIONS ====================
# Five seeds, ten epochs, default training settings

def _means(mode, cells, **kwargs):
    _, table = run_ablation(AblationConfig(mode=mode, cells=cells, **kwargs))
    return table.set_index("name")


@pytest.mark.slow
def test_multi_row_sdw_beats_single_direction_baseline():
    start = time.perf_counter()
    table = _means("table", ("baseline", "ours M=3"))
    elapsed = time.perf_counter() - start
    baseline, ours = table.loc["baseline"], table.loc["ours M=3"]
    assert ours["gzsl_mAP"] > baseline["gzsl_mAP"]
    assert ours["zsl_mAP"] >= 1.10 * baseline["zsl_mAP"]
    assert elapsed < 300.0


@pytest.mark.slow
def test_gzsl_map_does_not_drop_up_to_group_count():
    table = _means("m-sweep", ("M=1", "M=2", "M=3"))
    gzsl = [table.loc[name, "gzsl_mAP"] for name in ("M=1", "M=2", "M=3")]
    assert gzsl == sorted(gzsl)


@pytest.mark.slow
def test_regularizer_tightens_rows_without_hurting_zsl():
    table = _means("lambda-sweep", ("λ=0", "λ=0.3"))
    assert table.loc["λ=0.3", "mean_row_variance"] < table.loc["λ=0", "mean_row_variance"]
    assert table.loc["λ=0.3", "zsl_mAP"] >= table.loc["λ=0", "zsl_mAP"]


@pytest.mark.slow
def test_sdw_helps_on_many_label_images():
    table = _means("diverse", ("ours M=7 no-sdw", "ours M=7"), fixture="diverse")
    assert table.loc["ours M=7", "f1@10"] >= table.loc["ours M=7 no-sdw", "f1@10"]
