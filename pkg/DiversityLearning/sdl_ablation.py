"""
Ablation Runner
===============

Trains and evaluates a grid of loss configurations under shared seeds and
averages the metrics per configuration. Modes:
- table        : baseline -> +SDW -> more rows -> regularization, plus the
                 no-SDW and l2norm multi-row cells (ZSL / GZSL mAP)
- m-sweep      : number of rows M in {1, 2, 3, 5, 9}
- lambda-sweep : λ in {0, 0.1, 0.3, 0.5, 0.7} (ZSL mAP, F1@3, mean row variance)
- diverse      : baseline / no SDW / SDW on images with more than 6 relevant
                 labels, P/R/F1 at K=10

With no dataset given, the world is a synthetic fixture regenerated for every
seed; every cell sees the same worlds and the same training seeds.
"""

import logging
from dataclasses import dataclass, asdict, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm.auto import tqdm

from data.fixtures import fixture_test_images, fixtures
from DiversityLearning.sdl_data import Dataset, holdout_split
from DiversityLearning.sdl_errors import SDLValidationError
from DiversityLearning.sdl_eval import (
    diverse_subset_eval, evaluate_model, ground_truth, mean_row_variance,
    score_all, tag_list_for_task,
)
from DiversityLearning.sdl_optim import TrainConfig, train
from DiversityLearning.sdl_synth import SynthConfig, generate
from DiversityLearning.sdl_tracking import RunTracker
from DiversityLearning.sdl_wordvec import WordVecTable

logger = logging.getLogger(__name__)

MODES = ("table", "m-sweep", "lambda-sweep", "diverse")
M_SWEEP = (1, 2, 3, 5, 9)
LAMBDA_SWEEP = (0.0, 0.1, 0.3, 0.5, 0.7)
DIVERSE_MIN_LABELS = 6
DIVERSE_K = 10

World = Tuple[WordVecTable, Dataset, Dataset]


@dataclass(frozen=True)
class Cell:
    """One grid configuration"""
    name: str
    variant: str = "max"
    M: int = 1
    use_sdw: bool = True
    lam: float = 0.0


@dataclass(frozen=True)
class AblationConfig:
    mode: str = "table"
    fixture: str = "standard"
    seeds: int = 5
    base_seed: int = 0
    epochs: int = 10
    batch_size: int = 32
    max_lr: float = 3e-2
    weight_decay: float = 3e-4
    m: int = 3
    wide_m: int = 7
    lam: float = 0.3
    ks: Tuple[int, ...] = (3, 5)
    cells: Tuple[str, ...] = ()
    threads: int = 1
    overrides: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise SDLValidationError(f"unknown ablation mode {self.mode!r}, expected one of {MODES}")
        if self.fixture not in fixtures:
            raise SDLValidationError(f"unknown fixture {self.fixture!r}, expected one of {sorted(fixtures)}")
        if self.seeds < 1:
            raise SDLValidationError(f"seeds must be >= 1, got {self.seeds}")
        object.__setattr__(self, 'ks', tuple(self.ks))
        object.__setattr__(self, 'cells', tuple(self.cells))


def grid_cells(cfg: AblationConfig) -> List[Cell]:
    """The configurations a mode trains, in report order"""
    if cfg.mode == "table":
        return [
            Cell("baseline", variant="fast0tag", M=1, use_sdw=False, lam=0.0),
            Cell("+sdw", M=1, use_sdw=True, lam=0.0),
            Cell("+sdw M=2", M=2, use_sdw=True, lam=0.0),
            Cell("+sdw M=2 λ=0.1", M=2, use_sdw=True, lam=0.1),
            Cell(f"+sdw M={cfg.wide_m} λ=0.1", M=cfg.wide_m, use_sdw=True, lam=0.1),
            Cell(f"no-sdw M={cfg.wide_m} λ={cfg.lam:g}", M=cfg.wide_m, use_sdw=False, lam=cfg.lam),
            Cell(f"l2norm M={cfg.wide_m}", variant="l2norm", M=cfg.wide_m, use_sdw=False, lam=0.0),
            Cell(f"ours M={cfg.m}", M=cfg.m, use_sdw=True, lam=cfg.lam),
            Cell(f"ours M={cfg.wide_m}", M=cfg.wide_m, use_sdw=True, lam=cfg.lam),
        ]
    if cfg.mode == "m-sweep":
        return [Cell(f"M={M}", M=M, use_sdw=True, lam=cfg.lam) for M in M_SWEEP]
    if cfg.mode == "lambda-sweep":
        return [Cell(f"λ={lam:g}", M=cfg.wide_m, use_sdw=True, lam=lam) for lam in LAMBDA_SWEEP]
    return [
        Cell("baseline", variant="fast0tag", M=1, use_sdw=False, lam=0.0),
        Cell(f"ours M={cfg.wide_m} no-sdw", M=cfg.wide_m, use_sdw=False, lam=cfg.lam),
        Cell(f"ours M={cfg.wide_m}", M=cfg.wide_m, use_sdw=True, lam=cfg.lam),
    ]


def selected_cells(cfg: AblationConfig) -> List[Cell]:
    """grid_cells without duplicate names, narrowed to cfg.cells when given"""
    # m == wide_m collapses two table cells into one
    cells = list({cell.name: cell for cell in grid_cells(cfg)}.values())
    if not cfg.cells:
        return cells
    unknown = sorted(set(cfg.cells) - {cell.name for cell in cells})
    if unknown:
        raise SDLValidationError(
            f"unknown cells {unknown} for mode {cfg.mode!r}, expected names from {[c.name for c in cells]}"
        )
    return [cell for cell in cells if cell.name in cfg.cells]


def fixture_world(name: str, seed: int, overrides: Optional[dict] = None) -> World:
    """Generate a fixture preset for seed and hold out its test images"""
    synth_cfg = SynthConfig(**{**fixtures[name], **(overrides or {}), 'seed': seed})
    table, dataset = generate(synth_cfg)
    n_test = min(fixture_test_images[name], len(dataset) // 5)
    train_set, test_set = holdout_split(dataset, n_test, seed)
    return table, train_set, test_set


def _cell_metrics(cfg: AblationConfig, cell: Cell, world: World, seed: int) -> dict:
    table, train_set, test_set = world
    train_cfg = TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, max_lr=cfg.max_lr,
        weight_decay=cfg.weight_decay, lam=cell.lam, M=cell.M,
        variant=cell.variant, use_sdw=cell.use_sdw, seed=seed,
    )
    params, log = train(train_set, table, train_cfg, threads=cfg.threads)
    metrics = {'final_loss': log[-1]['mean_loss']}

    if cfg.mode == "diverse":
        tags = tag_list_for_task(test_set.seen, test_set.unseen, "gzsl")
        S = score_all(params, test_set, table, tags, threads=cfg.threads)
        report = diverse_subset_eval(S, ground_truth(test_set, S), DIVERSE_MIN_LABELS, DIVERSE_K)
        prf = report.at_k[DIVERSE_K]
        metrics.update({
            f'precision@{DIVERSE_K}': prf['precision'],
            f'recall@{DIVERSE_K}': prf['recall'],
            f'f1@{DIVERSE_K}': prf['f1'],
            'diverse_images': report.n_images,
        })
        return metrics

    zsl, _ = evaluate_model(params, test_set, table, "zsl", cfg.ks, threads=cfg.threads)
    metrics['zsl_mAP'] = zsl.mAP
    if cfg.mode == "lambda-sweep":
        metrics['zsl_f1@3'] = zsl.at_k[3]['f1'] if 3 in zsl.at_k else None
        metrics['mean_row_variance'] = mean_row_variance(params, test_set)
        return metrics
    gzsl, _ = evaluate_model(params, test_set, table, "gzsl", cfg.ks, threads=cfg.threads)
    metrics['gzsl_mAP'] = gzsl.mAP
    return metrics


def run_ablation(cfg: AblationConfig, world: Optional[World] = None,
                 tracker: Optional[RunTracker] = None, progress: bool = False) -> Tuple[dict, pd.DataFrame]:
    """
    Train and evaluate every cell of the mode's grid for each seed

    Parameters:
    cfg (AblationConfig): Mode, fixture, seeds and training settings
    world (tuple): Optional fixed (wordvecs, train, test); otherwise the fixture is regenerated per seed
    tracker (RunTracker): Receives per-cell mean metrics
    progress (bool): Show a tqdm bar over (seed, cell) runs

    Returns:
    tuple: (JSON-ready result dict, DataFrame with one row per cell of seed-averaged metrics)
    """
    if cfg.mode == "lambda-sweep" and 3 not in cfg.ks:
        cfg = AblationConfig(**{**asdict(cfg), 'ks': tuple(cfg.ks) + (3,)})
    cells = selected_cells(cfg)
    seeds = [cfg.base_seed + s for s in range(cfg.seeds)]
    logger.info(f"Ablation {cfg.mode}: {len(cells)} cells x {len(seeds)} seeds")

    rows = []
    bar = tqdm(total=len(cells) * len(seeds), desc=f"ablate {cfg.mode}", disable=not progress)
    for seed in seeds:
        seed_world = world if world is not None else fixture_world(cfg.fixture, seed, cfg.overrides)
        for cell in cells:
            metrics = _cell_metrics(cfg, cell, seed_world, seed)
            rows.append({'cell': cell.name, 'seed': seed, **metrics})
            logger.debug(f"{cell.name} seed={seed}: {metrics}")
            bar.update(1)
    bar.close()

    per_seed = pd.DataFrame(rows)
    metric_cols = [c for c in per_seed.columns if c not in ('cell', 'seed')]
    means = per_seed.groupby('cell', sort=False)[metric_cols].mean().reset_index()

    described = []
    for cell, (_, row) in zip(cells, means.iterrows()):
        entry = {**asdict(cell), **{col: _clean(row[col]) for col in metric_cols}}
        described.append(entry)
        if tracker is not None:
            tracker.log_metrics({f"{cell.name}/{k}": v for k, v in entry.items() if k in metric_cols})

    settings = {k: v for k, v in asdict(cfg).items() if k != 'overrides'}
    result = {
        'mode': cfg.mode,
        'fixture': cfg.fixture if world is None else None,
        'seeds': seeds,
        'settings': settings,
        'cells': described,
        'per_seed': [{k: _clean(v) for k, v in r.items()} for r in rows],
    }
    table = pd.DataFrame(described)[['name', 'variant', 'M', 'use_sdw', 'lam'] + metric_cols]
    return result, table


def _clean(value):
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return None
    if isinstance(value, np.generic):
        return value.item()
    return value


def format_table(table: pd.DataFrame) -> str:
    """Aligned text rendering of the per-cell means"""
    return table.to_string(index=False, float_format=lambda v: f"{v:.4f}")
