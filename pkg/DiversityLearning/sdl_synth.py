"""
Synthetic Worlds
================

Deterministic generator of a small zero-shot tagging world:
- G semantic groups with well separated unit-norm centers
- L labels per group scattered around their center, some held out as unseen
- Images that draw labels from one group or, with probability diversity_mix,
  from two or three groups
- Features x = R · mean(label vectors) + noise, with R a fixed seeded map
  with orthonormal columns (or rows when d_f < d_w)

Everything is drawn from one seeded generator, so a seed fully determines the
world. write_world() emits the standard artifact files.
"""

import logging
import os
import re
from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from DiversityLearning.sdl_core import sdw
from DiversityLearning.sdl_data import (
    Dataset, holdout_split, images_without_seen_labels,
    write_features, write_labels, write_split,
)
from DiversityLearning.sdl_errors import SDLValidationError
from DiversityLearning.sdl_wordvec import WordVecTable, lookup_labels, write_vec_file

logger = logging.getLogger(__name__)

MAX_CENTER_ATTEMPTS = 1000
_LABEL_PATTERN = re.compile(r'^g(\d+)_w(\d+)$')


@dataclass(frozen=True)
class SynthConfig:
    """Shape of the synthetic world; see the module docstring for the generative story"""
    d_w: int = 32
    d_f: int = 64
    groups: int = 3
    labels_per_group: int = 20
    unseen_per_group: int = 4
    n_images: int = 6000
    labels_per_image: Tuple[int, int] = (2, 6)
    diversity_mix: float = 0.6
    noise_sigma: float = 0.05
    seed: int = 0
    label_noise: float = 0.1  # variance, not std
    center_max_dot: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, 'labels_per_image', tuple(int(v) for v in self.labels_per_image))
        if min(self.d_w, self.d_f, self.groups, self.labels_per_group) < 1:
            raise SDLValidationError("d_w, d_f, groups and labels_per_group must be >= 1")
        if self.n_images < 0:
            raise SDLValidationError(f"n_images must be >= 0, got {self.n_images}")
        if not 0 <= self.unseen_per_group < self.labels_per_group:
            raise SDLValidationError(
                f"unseen_per_group must be in [0, {self.labels_per_group}), got {self.unseen_per_group}"
            )
        if len(self.labels_per_image) != 2:
            raise SDLValidationError("labels_per_image must be a (min, max) pair")
        low, high = self.labels_per_image
        if low < 1 or high < low:
            raise SDLValidationError(f"labels_per_image must satisfy 1 <= a <= b, got {self.labels_per_image}")
        if high > self.groups * self.labels_per_group:
            raise SDLValidationError(
                f"infeasible config: {high} labels per image but only "
                f"{self.groups * self.labels_per_group} labels exist"
            )
        if not 0.0 <= self.diversity_mix <= 1.0:
            raise SDLValidationError(f"diversity_mix must be in [0, 1], got {self.diversity_mix}")
        if self.noise_sigma < 0 or self.label_noise < 0:
            raise SDLValidationError("noise levels must be >= 0")


def label_name(group: int, index: int) -> str:
    return f"g{group}_w{index:02d}"


def label_group(label: str) -> int:
    """Group index encoded in a synthetic label name"""
    match = _LABEL_PATTERN.match(label)
    if not match:
        raise SDLValidationError(f"{label!r} is not a synthetic label")
    return int(match.group(1))


def _group_centers(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    centers: List[np.ndarray] = []
    for g in range(cfg.groups):
        for _ in range(MAX_CENTER_ATTEMPTS):
            c = rng.normal(size=cfg.d_w)
            c /= np.linalg.norm(c)
            if all(float(c @ other) < cfg.center_max_dot for other in centers):
                centers.append(c)
                break
        else:
            raise SDLValidationError(
                f"infeasible config: could not place group center {g} with pairwise dot < "
                f"{cfg.center_max_dot} in {cfg.d_w} dimensions"
            )
    return np.vstack(centers)


def _projection(rng: np.random.Generator, d_f: int, d_w: int) -> np.ndarray:
    """d_f x d_w matrix with orthonormal columns (orthonormal rows if d_f < d_w)"""
    if d_f >= d_w:
        q, _ = np.linalg.qr(rng.normal(size=(d_f, d_w)))
        return q
    q, _ = np.linalg.qr(rng.normal(size=(d_w, d_f)))
    return q.T


def _draw_image_labels(rng: np.random.Generator, cfg: SynthConfig, names: List[List[str]]) -> List[str]:
    low, high = cfg.labels_per_image
    diverse = cfg.groups > 1 and high > 1 and rng.random() < cfg.diversity_mix
    n_groups = int(rng.integers(2, min(3, cfg.groups, high) + 1)) if diverse else 1
    chosen = rng.choice(cfg.groups, size=n_groups, replace=False)

    pool = [label for g in chosen for label in names[g]]
    k = min(int(rng.integers(low, high + 1)), len(pool))
    return [pool[int(i)] for i in rng.choice(len(pool), size=k, replace=False)]


def generate(cfg: SynthConfig) -> Tuple[WordVecTable, Dataset]:
    """
    Build the word-vector table and the annotated image set for cfg

    Returns:
    tuple: (WordVecTable with every label, Dataset with full ground truth and the seen/unseen split)
    """
    rng = np.random.default_rng(cfg.seed)
    centers = _group_centers(rng, cfg)

    names = [[label_name(g, l) for l in range(cfg.labels_per_group)] for g in range(cfg.groups)]
    labels, vectors = [], []
    for g in range(cfg.groups):
        offsets = rng.normal(0.0, np.sqrt(cfg.label_noise), size=(cfg.labels_per_group, cfg.d_w))
        noisy = centers[g] + offsets
        noisy /= np.linalg.norm(noisy, axis=1, keepdims=True)
        labels.extend(names[g])
        vectors.append(noisy)
    table = WordVecTable(dim=cfg.d_w, labels=labels, vectors=np.vstack(vectors))

    unseen = set()
    for g in range(cfg.groups):
        held_out = rng.permutation(cfg.labels_per_group)[:cfg.unseen_per_group]
        unseen.update(names[g][int(i)] for i in held_out)
    seen = frozenset(labels) - unseen

    R = _projection(rng, cfg.d_f, cfg.d_w)
    image_labels, features = [], np.zeros((cfg.n_images, cfg.d_f), dtype=np.float32)
    for i in range(cfg.n_images):
        y = _draw_image_labels(rng, cfg, names)
        mean = lookup_labels(table, y).mean(axis=0)
        features[i] = R @ mean + rng.normal(0.0, cfg.noise_sigma, size=cfg.d_f)
        image_labels.append(frozenset(y))

    dataset = Dataset(
        features=features,
        ids=[f"img{i:06d}" for i in range(cfg.n_images)],
        labels=image_labels,
        seen=seen,
        unseen=frozenset(unseen),
    )
    flagged = images_without_seen_labels(dataset)
    if flagged:
        logger.warning(f"{len(flagged)} synthetic images have no seen label and will be skipped in training")
    logger.info(
        f"✓ Synthetic world: {len(table)} labels ({len(seen)} seen / {len(unseen)} unseen), "
        f"{cfg.n_images} images, seed={cfg.seed}"
    )
    return table, dataset


def synth_statistics(table: WordVecTable, dataset: Dataset) -> Dict[str, object]:
    """
    Label frequency, labels per image and SDW of single- vs multi-group images

    Returns:
    dict: Summary statistics of the generated set
    """
    counts = np.array([len(y) for y in dataset.labels], dtype=np.float64)
    frequency: Dict[str, int] = {label: 0 for label in table.labels}
    single, multi = [], []
    for y in dataset.labels:
        for label in y:
            frequency[label] += 1
        weight = sdw(lookup_labels(table, sorted(y))) if y else 1.0
        (multi if len({label_group(label) for label in y}) > 1 else single).append(weight)
    freq = np.array(list(frequency.values()), dtype=np.float64)
    return {
        'images': len(dataset),
        'labels': len(table),
        'mean_labels_per_image': float(counts.mean()) if counts.size else 0.0,
        'label_frequency_range': (int(freq.min()), int(freq.max())) if freq.size else (0, 0),
        'mean_label_frequency': float(freq.mean()) if freq.size else 0.0,
        'multi_group_fraction': len(multi) / len(dataset) if len(dataset) else 0.0,
        'mean_omega_d_single_group': float(np.mean(single)) if single else None,
        'mean_omega_d_multi_group': float(np.mean(multi)) if multi else None,
        'images_without_seen_labels': len(images_without_seen_labels(dataset)),
    }


def write_world(table: WordVecTable, dataset: Dataset, out_dir, n_test: int = 0,
                seed: int = 0) -> Dict[str, str]:
    """
    Write the world as artifact files, optionally holding out n_test images

    Returns:
    dict: Artifact name -> written path
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        'wordvecs': os.path.join(out_dir, 'wordvecs.vec'),
        'seen': os.path.join(out_dir, 'seen.txt'),
        'unseen': os.path.join(out_dir, 'unseen.txt'),
    }
    write_vec_file(table, paths['wordvecs'])
    write_split(paths['seen'], dataset.seen)
    write_split(paths['unseen'], dataset.unseen)

    if n_test:
        parts = dict(zip(('train', 'test'), holdout_split(dataset, n_test, seed)))
    else:
        parts = {'train': dataset}
    for name, part in parts.items():
        paths[f'{name}_features'] = os.path.join(out_dir, f'{name}.sdlf')
        paths[f'{name}_labels'] = os.path.join(out_dir, f'{name}_labels.tsv')
        write_features(paths[f'{name}_features'], part.ids, part.features)
        write_labels(paths[f'{name}_labels'], part.ids, part.labels)

    logger.info(f"✓ Wrote {len(paths)} artifacts to {out_dir}")
    return paths


def config_summary(cfg: SynthConfig, extra: Optional[dict] = None) -> dict:
    summary = asdict(cfg)
    if extra:
        summary.update(extra)
    return summary
