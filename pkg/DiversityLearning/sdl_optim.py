"""
Optimization
============

Adam with decoupled ("true") weight decay, the one-cycle cosine learning-rate
schedule, and the training loop over precomputed image features.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from tqdm.auto import tqdm

from DiversityLearning.sdl_core import VARIANTS, LabelInstance, LossConfig, final_loss
from DiversityLearning.sdl_data import Dataset, batches
from DiversityLearning.sdl_errors import SDLNumericError, SDLValidationError
from DiversityLearning.sdl_model import ModelParams, backward, forward_batch, init_params
from DiversityLearning.sdl_wordvec import WordVecTable, lookup_labels
from utility.json_io import write_jsonl

logger = logging.getLogger(__name__)


# ==================== SCHEDULE ====================

@dataclass(frozen=True)
class OneCycleSchedule:
    """
    One-cycle policy: linear warmup from max_lr/div_factor to max_lr over the
    first warmup_frac of the steps, then cosine decay to max_lr/final_div_factor
    """
    max_lr: float
    total_steps: int
    warmup_frac: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    def __post_init__(self):
        if not self.max_lr > 0:
            raise SDLValidationError(f"max_lr must be positive, got {self.max_lr}")
        if self.total_steps < 1:
            raise SDLValidationError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise SDLValidationError(f"warmup_frac must be in [0, 1], got {self.warmup_frac}")

    @property
    def initial_lr(self) -> float:
        return self.max_lr / self.div_factor

    @property
    def final_lr(self) -> float:
        return self.max_lr / self.final_div_factor

    @property
    def warmup_steps(self) -> float:
        return self.warmup_frac * self.total_steps


def lr_at(schedule: OneCycleSchedule, t: float) -> float:
    """Learning rate at step t, 0 <= t <= total_steps; continuous at the warmup peak"""
    if not 0 <= t <= schedule.total_steps:
        raise SDLValidationError(f"step {t} outside [0, {schedule.total_steps}]")
    warm = schedule.warmup_steps
    if t <= warm:
        if warm == 0:
            return schedule.max_lr
        return schedule.initial_lr + (schedule.max_lr - schedule.initial_lr) * (t / warm)
    progress = (t - warm) / (schedule.total_steps - warm)
    cosine = 0.5 * (1.0 + math.cos(math.pi * progress))
    return schedule.final_lr + (schedule.max_lr - schedule.final_lr) * cosine


# ==================== ADAM ====================

@dataclass(frozen=True, eq=False)
class OptimState:
    """Adam step count, moment accumulators (float64, keyed like the params) and hyperparameters"""
    schedule: OneCycleSchedule
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: OptimState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              lr: Optional[float] = None) -> Tuple[Dict[str, np.ndarray], OptimState]:
    """
    One bias-corrected Adam update with decoupled weight decay

    params <- params * (1 - lr_t * wd), then params <- params - lr_t * m_hat / (sqrt(v_hat) + eps).
    lr_t comes from the schedule at the current step unless lr is given.

    Returns:
        (new_params, new_state); inputs are not modified, dtypes are preserved

    Raises:
        SDLNumericError: a gradient contains NaN or inf
    """
    for name, grad in grads.items():
        bad = int(np.size(grad) - np.count_nonzero(np.isfinite(grad)))
        if bad:
            raise SDLNumericError(f"non-finite gradient for {name!r}: {bad} entries at step {state.step + 1}")
        if np.shape(grad) != np.shape(params[name]):
            raise SDLValidationError(f"gradient shape {np.shape(grad)} != param shape {np.shape(params[name])} for {name!r}")

    if lr is None:
        lr = lr_at(state.schedule, min(state.step, state.schedule.total_steps))
    t = state.step + 1
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t

    new_params, new_m, new_v = {}, {}, {}
    for name, value in params.items():
        p = np.asarray(value, dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        p = p * (1.0 - lr * state.weight_decay)
        p = p - lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        new_params[name] = p.astype(np.asarray(value).dtype, copy=False)
        new_m[name], new_v[name] = m, v

    return new_params, replace(state, step=t, m=new_m, v=new_v)


# ==================== TRAINING ====================

@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters (defaults follow the reference training setup)"""
    epochs: int = 10
    batch_size: int = 32
    max_lr: float = 1e-4
    weight_decay: float = 3e-4
    lam: float = 0.3
    M: int = 7
    variant: str = "max"
    use_sdw: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise SDLValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise SDLValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.max_lr > 0:
            raise SDLValidationError(f"max_lr must be positive, got {self.max_lr}")
        if self.weight_decay < 0:
            raise SDLValidationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.variant not in VARIANTS:
            raise SDLValidationError(f"unknown variant {self.variant!r}")
        self.loss_config()

    def loss_config(self) -> LossConfig:
        return LossConfig(variant=self.variant, lam=self.lam, use_sdw=self.use_sdw, M=self.M)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise SDLValidationError(f"unknown training config keys: {unknown}")
        return cls(**values)


def _label_indices(dataset: Dataset, vocabulary: List[str]):
    """Per image: (positive indices, negative indices) into the seen vocabulary, or None to skip"""
    column = {label: j for j, label in enumerate(vocabulary)}
    all_idx = np.arange(len(vocabulary))
    out = []
    for y in dataset.labels:
        pos = np.array(sorted(column[label] for label in y if label in column), dtype=np.int64)
        if len(pos) == 0 or len(pos) == len(vocabulary):
            out.append(None)
            continue
        out.append((pos, np.setdiff1d(all_idx, pos, assume_unique=True)))
    return out


def _epoch_record(epoch, totals, n_valid, lr, skipped) -> dict:
    return {
        'epoch': epoch,
        'mean_loss': totals[0] / n_valid,
        'mean_l_rank': totals[1] / n_valid,
        'mean_l_reg': totals[2] / n_valid,
        'mean_omega_d': totals[3] / n_valid,
        'lr': lr,
        'skipped_samples': skipped,
    }


def train(dataset: Dataset, wordvecs: WordVecTable, cfg: TrainConfig, threads: int = 1,
          progress: bool = False,
          on_epoch: Optional[Callable[[dict], None]] = None) -> Tuple[ModelParams, List[dict]]:
    """
    Train the linear head on precomputed features

    Positives are the seen labels present on an image, negatives every other
    seen label. Images without positives or without negatives are skipped.
    The batch loss is the mean over the batch's non-skipped images; gradients
    are reduced in a fixed order so results do not depend on thread count.

    Parameters:
    dataset (Dataset): Training images (unseen annotations are ignored)
    wordvecs (WordVecTable): Must resolve every seen label
    cfg (TrainConfig): Hyperparameters
    threads (int): Workers for per-image gradient evaluation
    progress (bool): Show a tqdm bar over epochs
    on_epoch (callable): Receives each epoch record as it is produced

    Returns:
    tuple: (ModelParams as float32, list of per-epoch log records)
    """
    if len(dataset) == 0:
        raise SDLValidationError("cannot train on an empty dataset")
    if threads < 1:
        raise SDLValidationError(f"threads must be >= 1, got {threads}")

    vocabulary = sorted(dataset.seen)
    V = lookup_labels(wordvecs, vocabulary)
    index_pairs = _label_indices(dataset, vocabulary)
    n_valid = sum(pair is not None for pair in index_pairs)
    skipped = len(dataset) - n_valid
    if n_valid == 0:
        raise SDLValidationError("no trainable samples: every image lacks seen positives or negatives")
    if skipped:
        logger.warning(f"Skipping {skipped} of {len(dataset)} images with no seen positives or no negatives")

    loss_cfg = cfg.loss_config()
    params = init_params(cfg.M, wordvecs.dim, dataset.d_f, cfg.seed, cfg.variant).as_float64()
    n_batches = math.ceil(len(dataset) / cfg.batch_size)
    schedule = OneCycleSchedule(max_lr=cfg.max_lr, total_steps=cfg.epochs * n_batches)
    state = OptimState(schedule=schedule, weight_decay=cfg.weight_decay)
    features = dataset.features

    def sample_loss(item):
        i, A = item
        pos, neg = index_pairs[i]
        return final_loss(A, LabelInstance(V[pos], V[neg]), loss_cfg)

    log: List[dict] = []
    lr = lr_at(schedule, 0)
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in tqdm(range(1, cfg.epochs + 1), desc="Training", disable=not progress):
            totals = [0.0, 0.0, 0.0, 0.0]
            for batch in batches(len(dataset), cfg.batch_size, cfg.seed, epoch):
                batch = [int(i) for i in batch if index_pairs[i] is not None]
                if not batch:
                    continue
                A_batch = forward_batch(params, features[batch])
                items = list(zip(batch, A_batch))
                outputs = list(executor.map(sample_loss, items)) if executor else [sample_loss(it) for it in items]

                grad_W = np.zeros_like(params.W)
                grad_b = np.zeros_like(params.b)
                for i, out in zip(batch, outputs):
                    if not np.isfinite(out.value):
                        raise SDLNumericError(f"non-finite loss for image {dataset.ids[i]} in epoch {epoch}")
                    gW, gb = backward(params, features[i], out.grad_A)
                    grad_W += gW
                    grad_b += gb
                    totals[0] += out.value
                    totals[1] += out.l_rank
                    totals[2] += out.l_reg
                    totals[3] += out.omega_d

                lr = lr_at(schedule, state.step)
                n = len(batch)
                new_arrays, state = adam_step(state, params.arrays(), {"W": grad_W / n, "b": grad_b / n}, lr=lr)
                params = params.with_arrays(new_arrays)

            record = _epoch_record(epoch, totals, n_valid, lr, skipped)
            log.append(record)
            logger.info(
                f"Epoch {epoch}/{cfg.epochs}: loss={record['mean_loss']:.6f} "
                f"rank={record['mean_l_rank']:.6f} reg={record['mean_l_reg']:.6f} lr={lr:.3g}"
            )
            if on_epoch is not None:
                on_epoch(record)
    finally:
        if executor is not None:
            executor.shutdown()

    return params.as_float32(), log


def write_training_log(log: List[dict], path) -> str:
    """One JSON object per epoch (JSON-lines)"""
    return write_jsonl(log, path)
