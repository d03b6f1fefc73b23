"""
Evaluation
==========

Inference and metrics for a trained head. This module contains functions for:
- Scoring every (image, tag) pair: r_ij = max_m <A_i^m, t_j>
- Per-label average precision and mAP (tag-based retrieval)
- Micro-averaged precision / recall / F1 at top-K (image tagging)
- The diverse-subset evaluation (images with many relevant labels)
- Ranked retrieval for a query tag and the per-row attribution report
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from DiversityLearning.sdl_data import Dataset, relevance_matrix
from DiversityLearning.sdl_errors import SDLValidationError
from DiversityLearning.sdl_model import ModelParams, forward_batch
from DiversityLearning.sdl_wordvec import WordVecTable, lookup_labels
from utility.json_io import write_jsonl

logger = logging.getLogger(__name__)

TASKS = ("zsl", "gzsl")


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """
    N x |T| relevance scores with the argmax row behind each cell

    Attributes:
        scores: (N, |T|) float64
        argmax_rows: (N, |T|) int, lowest row index on ties
        tags: Column tags T (non-empty)
        ids: Row image ids
    """
    scores: np.ndarray
    argmax_rows: np.ndarray
    tags: List[str]
    ids: List[str]

    def __post_init__(self):
        if not self.tags:
            raise SDLValidationError("a score matrix needs at least one tag")
        if self.scores.shape != (len(self.ids), len(self.tags)):
            raise SDLValidationError(
                f"scores shape {self.scores.shape} != ({len(self.ids)}, {len(self.tags)})"
            )
        if self.argmax_rows.shape != self.scores.shape:
            raise SDLValidationError("argmax_rows must match the scores shape")
        if not np.all(np.isfinite(self.scores)):
            raise SDLValidationError("score matrix contains non-finite values")

    def columns(self, tags: Sequence[str]) -> "ScoreMatrix":
        """Restrict to a subset of tag columns, in the given order"""
        position = {tag: j for j, tag in enumerate(self.tags)}
        missing = [tag for tag in tags if tag not in position]
        if missing:
            raise SDLValidationError(f"tags not in score matrix: {missing[:5]}")
        cols = [position[tag] for tag in tags]
        return ScoreMatrix(self.scores[:, cols], self.argmax_rows[:, cols], list(tags), self.ids)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.scores, index=pd.Index(self.ids, name='image_id'), columns=self.tags)
        return df


@dataclass(eq=False)
class MetricsReport:
    """mAP, per-label AP and micro P/R/F1 at each K for one evaluated tag set"""
    task: str
    mAP: float
    per_label_ap: Dict[str, float]
    at_k: Dict[int, Dict[str, float]]
    n_images: int
    n_tags: int
    skipped_labels: List[str] = field(default_factory=list)
    generated_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec='seconds'))

    def to_dict(self) -> dict:
        return {
            'task': self.task,
            'mAP': self.mAP,
            'at_k': {str(k): dict(v) for k, v in sorted(self.at_k.items())},
            'counts': {
                'images': self.n_images,
                'tags': self.n_tags,
                'labels_skipped': len(self.skipped_labels),
            },
            'skipped_labels': list(self.skipped_labels),
            'per_label_ap': dict(self.per_label_ap),
            'generated_at': self.generated_at,
        }

    def summary(self) -> dict:
        out = {'task': self.task, 'images': self.n_images, 'tags': self.n_tags, 'mAP': self.mAP}
        for k, prf in sorted(self.at_k.items()):
            out[f'precision@{k}'] = prf['precision']
            out[f'recall@{k}'] = prf['recall']
            out[f'f1@{k}'] = prf['f1']
        out['labels_skipped'] = len(self.skipped_labels)
        return out


# ==================== SCORING ====================

def tag_list_for_task(seen, unseen, task: str) -> List[str]:
    """ZSL ranks the unseen tags U; GZSL ranks C = S ∪ U. Sorted for stable columns."""
    if task == "zsl":
        tags = sorted(unseen)
    elif task == "gzsl":
        tags = sorted(set(seen) | set(unseen))
    else:
        raise SDLValidationError(f"unknown task {task!r}, expected one of {TASKS}")
    if not tags:
        raise SDLValidationError(f"no tags to evaluate for task {task!r}")
    return tags


def _score_chunk(params: ModelParams, X: np.ndarray, T: np.ndarray, variant: str):
    A = forward_batch(params, X)  # (n, M, d_w)
    products = np.einsum('nmd,td->nmt', A, T)
    rows = np.argmax(products, axis=1)
    if variant == "l2norm":
        scores = np.sqrt(np.sum(products * products, axis=1))
    else:
        scores = np.take_along_axis(products, rows[:, None, :], axis=1)[:, 0, :]
    return scores, rows


def score_all(params: ModelParams, dataset: Dataset, wordvecs: WordVecTable, tags: Sequence[str],
              variant: Optional[str] = None, threads: int = 1, chunk_size: int = 512) -> ScoreMatrix:
    """
    Score every image in dataset against every tag

    Parameters:
    params (ModelParams): Trained head
    dataset (Dataset): Images to score
    wordvecs (WordVecTable): Must resolve every tag
    tags (list): Column tags
    variant (str): Scoring rule; defaults to the one the params carry
    threads (int): Image chunks scored in parallel, concatenated in order

    Returns:
    ScoreMatrix: r_ij plus the argmax row per cell
    """
    tags = list(tags)
    if not tags:
        raise SDLValidationError("score_all needs at least one tag")
    variant = variant or params.variant
    T = lookup_labels(wordvecs, tags)
    if T.shape[1] != params.d_w:
        raise SDLValidationError(f"word-vector dim {T.shape[1]} != model d_w {params.d_w}")

    starts = range(0, len(dataset), chunk_size)
    chunks = [dataset.features[s:s + chunk_size] for s in starts]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda X: _score_chunk(params, X, T, variant), chunks))
    else:
        parts = [_score_chunk(params, X, T, variant) for X in chunks]

    if parts:
        scores = np.concatenate([p[0] for p in parts], axis=0)
        rows = np.concatenate([p[1] for p in parts], axis=0)
    else:
        scores = np.zeros((0, len(tags)))
        rows = np.zeros((0, len(tags)), dtype=np.int64)
    return ScoreMatrix(scores=scores, argmax_rows=rows, tags=tags, ids=list(dataset.ids))


def ground_truth(dataset: Dataset, S: ScoreMatrix) -> np.ndarray:
    if list(dataset.ids) != list(S.ids):
        raise SDLValidationError("dataset and score matrix rows are not aligned")
    return relevance_matrix(dataset, S.tags)


def _check_gt(S: ScoreMatrix, gt) -> np.ndarray:
    gt = np.asarray(gt, dtype=bool)
    if gt.shape != S.scores.shape:
        raise SDLValidationError(f"ground truth shape {gt.shape} != score shape {S.scores.shape}")
    return gt


# ==================== RETRIEVAL METRICS ====================

def average_precision(scores, relevance) -> float:
    """
    AP of the ranking induced by scores (descending, ties in index order)

    AP = (1/n_pos) Σ_{relevant ranks i} (relevant count in top i) / i

    Raises:
        SDLValidationError: no relevant item
    """
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance, dtype=bool)
    if scores.shape != relevance.shape or scores.ndim != 1:
        raise SDLValidationError("scores and relevance must be vectors of equal length")
    n_pos = int(relevance.sum())
    if n_pos == 0:
        raise SDLValidationError("average precision is undefined without relevant items")
    order = np.argsort(-scores, kind='stable')
    rel = relevance[order]
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return float(np.sum(hits[rel] / ranks[rel]) / n_pos)


def per_label_ap(S: ScoreMatrix, gt) -> Tuple[Dict[str, float], List[str]]:
    """
    AP of every tag column that has at least one positive image

    Returns:
    tuple: ({tag: AP}, [tags skipped for having no positives])
    """
    gt = _check_gt(S, gt)
    aps, skipped = {}, []
    for j, tag in enumerate(S.tags):
        if not gt[:, j].any():
            skipped.append(tag)
            continue
        aps[tag] = average_precision(S.scores[:, j], gt[:, j])
    return aps, skipped


def map_score(S: ScoreMatrix, gt) -> float:
    """Mean AP over labels with at least one positive image"""
    aps, skipped = per_label_ap(S, gt)
    if not aps:
        raise SDLValidationError("mAP is undefined: no label has a positive image")
    if skipped:
        logger.debug(f"mAP skips {len(skipped)} labels without positives")
    return float(np.mean(list(aps.values())))


# ==================== TAGGING METRICS ====================

def _ranked_columns(S: ScoreMatrix) -> np.ndarray:
    """(N, |T|) column order per image: score descending, ties by tag name"""
    tag_rank = np.empty(len(S.tags), dtype=np.int64)
    tag_rank[np.argsort(np.array(S.tags), kind='stable')] = np.arange(len(S.tags))
    names = np.broadcast_to(tag_rank, S.scores.shape)
    return np.lexsort((names, -S.scores), axis=-1)


def prf_at_k(S: ScoreMatrix, gt, K: int) -> Tuple[float, float, float]:
    """
    Micro-averaged precision, recall and F1 of each image's top-K tags

    P = Σ hits / (K·N), R = Σ hits / Σ |Y_i|, F1 = 2PR/(P+R) (0 when P+R = 0).
    Images without relevant tags only add to the precision denominator.
    """
    if K < 1:
        raise SDLValidationError(f"K must be >= 1, got {K}")
    gt = _check_gt(S, gt)
    n = gt.shape[0]
    if n == 0:
        raise SDLValidationError("P/R/F1 is undefined for zero images")
    top = _ranked_columns(S)[:, :K]
    hits = int(gt[np.arange(n)[:, None], top].sum())
    relevant = int(gt.sum())
    precision = hits / (K * n)
    recall = hits / relevant if relevant else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def evaluate(S: ScoreMatrix, gt, ks: Sequence[int] = (3, 5), task: str = "zsl") -> MetricsReport:
    """
    Full report: mAP, per-label AP and P/R/F1 at every K

    Parameters:
    S (ScoreMatrix): Scores to evaluate
    gt (ndarray): (N, |T|) boolean relevance
    ks (list): Cutoffs for the tagging metrics
    task (str): Recorded in the report

    Returns:
    MetricsReport: The assembled report
    """
    aps, skipped = per_label_ap(S, gt)
    if not aps:
        raise SDLValidationError("no evaluated label has a positive image")
    at_k = {}
    for k in sorted(set(int(k) for k in ks)):
        p, r, f1 = prf_at_k(S, gt, k)
        at_k[k] = {'precision': p, 'recall': r, 'f1': f1}
    if skipped:
        logger.info(f"{len(skipped)} of {len(S.tags)} labels have no positive image and are skipped")
    return MetricsReport(
        task=task,
        mAP=float(np.mean(list(aps.values()))),
        per_label_ap=aps,
        at_k=at_k,
        n_images=len(S.ids),
        n_tags=len(S.tags),
        skipped_labels=skipped,
    )


def diverse_subset_eval(S: ScoreMatrix, gt, min_labels: int = 6, K: int = 10,
                        task: str = "gzsl") -> MetricsReport:
    """
    Metrics restricted to images with strictly more than min_labels relevant tags

    Raises:
        SDLValidationError: no image qualifies
    """
    gt = _check_gt(S, gt)
    keep = np.flatnonzero(gt.sum(axis=1) > min_labels)
    if keep.size == 0:
        raise SDLValidationError(f"no image has more than {min_labels} relevant labels")
    sub = ScoreMatrix(S.scores[keep], S.argmax_rows[keep], S.tags, [S.ids[i] for i in keep])
    logger.info(f"Diverse subset: {keep.size} of {len(S.ids)} images with > {min_labels} labels")
    return evaluate(sub, gt[keep], ks=(K,), task=task)


# ==================== INFERENCE ====================

def retrieve(S: ScoreMatrix, tag: str, top_n: int) -> List[str]:
    """Image ids ranked by r_ij for one tag, descending, ties by id"""
    if top_n < 1:
        raise SDLValidationError(f"top_n must be >= 1, got {top_n}")
    try:
        j = S.tags.index(tag)
    except ValueError:
        raise SDLValidationError(f"tag {tag!r} is not a scored column") from None
    order = np.lexsort((np.array(S.ids, dtype=str), -S.scores[:, j]))
    return [S.ids[i] for i in order[:top_n]]


def top_k_tags(S: ScoreMatrix, K: int) -> List[List[Tuple[str, float, int]]]:
    """Per image, the K best (tag, score, argmax row) triples"""
    if K < 1:
        raise SDLValidationError(f"K must be >= 1, got {K}")
    ranked = _ranked_columns(S)[:, :K]
    return [
        [(S.tags[j], float(S.scores[i, j]), int(S.argmax_rows[i, j])) for j in ranked[i]]
        for i in range(len(S.ids))
    ]


def row_attribution_report(S: ScoreMatrix, gt=None, top_k: int = 10) -> List[dict]:
    """
    Per image, the top-k tags grouped by the row of A that produced their score

    Returns:
    list: One record per image: {"image_id", "rows": {row: [{"tag", "score", "relevant"?}]}}
    """
    gt = _check_gt(S, gt) if gt is not None else None
    position = {tag: j for j, tag in enumerate(S.tags)}
    records = []
    for i, (image_id, tagged) in enumerate(zip(S.ids, top_k_tags(S, top_k))):
        rows: Dict[str, list] = {}
        for tag, value, row in sorted(tagged, key=lambda item: item[2]):
            entry = {'tag': tag, 'score': value}
            if gt is not None:
                entry['relevant'] = bool(gt[i, position[tag]])
            rows.setdefault(str(row), []).append(entry)
        records.append({'image_id': image_id, 'rows': rows})
    return records


def write_attribution_report(records: List[dict], path) -> str:
    return write_jsonl(records, path)


def mean_row_variance(params: ModelParams, dataset: Dataset) -> float:
    """Mean over images and columns of the population variance across the rows of A"""
    if len(dataset) == 0:
        raise SDLValidationError("mean_row_variance needs at least one image")
    A = forward_batch(params, dataset.features)
    return float(np.mean(np.var(A, axis=1)))


def export_scores(S: ScoreMatrix, path) -> None:
    S.to_frame().reset_index().to_parquet(path, engine='pyarrow', index=False)
    logger.info(f"✓ Score matrix ({len(S.ids)} x {len(S.tags)}) written to {path}")


def evaluate_model(params: ModelParams, dataset: Dataset, wordvecs: WordVecTable, task: str = "zsl",
                   ks: Sequence[int] = (3, 5), variant: Optional[str] = None,
                   threads: int = 1) -> Tuple[MetricsReport, ScoreMatrix]:
    """score_all + evaluate over the task's tag list"""
    tags = tag_list_for_task(dataset.seen, dataset.unseen, task)
    S = score_all(params, dataset, wordvecs, tags, variant=variant, threads=threads)
    report = evaluate(S, ground_truth(dataset, S), ks=ks, task=task)
    return report, S
