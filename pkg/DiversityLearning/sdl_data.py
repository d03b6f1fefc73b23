"""
Dataset I/O
===========

Feature matrices, label annotations, seen/unseen split files and batching.

Feature file layout (little-endian):
    magic "SDLF" | u32 version=1 | u32 N | u32 d_f |
    N ids, each u16 byte length + UTF-8 bytes | N*d_f float32 row-major
Labels: TSV `image_id<TAB>comma,separated,labels` (label list may be empty).
Splits: plain text, one label per line.
"""

import csv
import logging
import struct
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from DiversityLearning.sdl_errors import SDLValidationError
from DiversityLearning.sdl_wordvec import canonicalize_label

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"SDLF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_ID_LEN = struct.Struct("<H")


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Images as feature rows plus their annotated label sets Y_n

    Attributes:
        features: (N, d_f) float32 matrix
        ids: N image ids, unique
        labels: N frozensets of canonical labels
        seen: Seen tag set S
        unseen: Unseen tag set U, disjoint from S
    """
    features: np.ndarray
    ids: List[str]
    labels: List[FrozenSet[str]]
    seen: FrozenSet[str]
    unseen: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float32)
        if features.ndim != 2:
            raise SDLValidationError(f"features must be a 2-D matrix, got shape {features.shape}")
        if not (len(self.ids) == len(self.labels) == features.shape[0]):
            raise SDLValidationError(
                f"{len(self.ids)} ids, {len(self.labels)} label sets and {features.shape[0]} feature rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise SDLValidationError("image ids must be unique")
        if not np.all(np.isfinite(features)):
            raise SDLValidationError("features contain non-finite values")
        seen, unseen = frozenset(self.seen), frozenset(self.unseen)
        overlap = seen & unseen
        if overlap:
            raise SDLValidationError(f"labels both seen and unseen: {sorted(overlap)[:5]}")
        vocabulary = seen | unseen
        labels = [frozenset(y) for y in self.labels]
        for image_id, y in zip(self.ids, labels):
            unknown = y - vocabulary
            if unknown:
                raise SDLValidationError(f"image {image_id}: labels outside the split {sorted(unknown)[:5]}")
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'ids', list(self.ids))
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'seen', seen)
        object.__setattr__(self, 'unseen', unseen)

    def __len__(self):
        return len(self.ids)

    @property
    def d_f(self) -> int:
        return self.features.shape[1]

    def training_view(self) -> "Dataset":
        """Same images with every annotation restricted to the seen tags"""
        return Dataset(
            features=self.features,
            ids=self.ids,
            labels=[y & self.seen for y in self.labels],
            seen=self.seen,
            unseen=self.unseen,
        )

    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = list(indices)
        return Dataset(
            features=self.features[indices],
            ids=[self.ids[i] for i in indices],
            labels=[self.labels[i] for i in indices],
            seen=self.seen,
            unseen=self.unseen,
        )


# ==================== FEATURES ====================

def write_features(path, ids: Sequence[str], matrix) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise SDLValidationError(f"feature matrix shape {matrix.shape} does not match {len(ids)} ids")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, matrix.shape[0], matrix.shape[1]))
        for image_id in ids:
            encoded = str(image_id).encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise SDLValidationError(f"image id longer than 65535 bytes: {image_id[:40]}...")
            f.write(_ID_LEN.pack(len(encoded)))
            f.write(encoded)
        f.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def load_features(path) -> Tuple[List[str], np.ndarray]:
    """
    Read an SDLF feature file

    Returns:
    tuple: (ids, (N, d_f) float32 matrix), order preserved

    Raises:
    SDLValidationError: bad magic / version, truncation, trailing bytes, non-finite values
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise SDLValidationError(f"{path}: truncated feature header")
    magic, version, n, d_f = _HEADER.unpack_from(raw, 0)
    if magic != FEATURE_MAGIC:
        raise SDLValidationError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise SDLValidationError(f"{path}: unsupported feature file version {version}")

    offset = _HEADER.size
    ids = []
    for _ in range(n):
        if offset + _ID_LEN.size > len(raw):
            raise SDLValidationError(f"{path}: truncated id block")
        (length,) = _ID_LEN.unpack_from(raw, offset)
        offset += _ID_LEN.size
        if offset + length > len(raw):
            raise SDLValidationError(f"{path}: truncated id block")
        try:
            ids.append(raw[offset:offset + length].decode("utf-8"))
        except UnicodeDecodeError:
            raise SDLValidationError(f"{path}: image id is not valid UTF-8") from None
        offset += length

    expected = offset + 4 * n * d_f
    if len(raw) < expected:
        raise SDLValidationError(f"{path}: truncated feature block ({len(raw)} of {expected} bytes)")
    if len(raw) > expected:
        raise SDLValidationError(f"{path}: {len(raw) - expected} trailing bytes")
    matrix = np.frombuffer(raw, dtype="<f4", count=n * d_f, offset=offset).astype(np.float32)
    matrix = matrix.reshape(n, d_f)
    if not np.all(np.isfinite(matrix)):
        raise SDLValidationError(f"{path}: non-finite feature values")
    logger.info(f"✓ Loaded {n} feature rows (d_f={d_f}) from {path}")
    return ids, matrix


# ==================== LABELS ====================

def _parse_label_list(text: str) -> FrozenSet[str]:
    labels = (canonicalize_label(part) for part in str(text).split(','))
    return frozenset(label for label in labels if label)


def load_labels(path, ids: Sequence[str]) -> List[FrozenSet[str]]:
    """
    Read a TSV annotation file aligned to ids

    Parameters:
    path (str): TSV `image_id<TAB>comma-separated-labels`
    ids (list): Image ids in dataset order

    Returns:
    list: One frozenset of canonical labels per id; ids absent from the file get empty sets

    Raises:
    SDLValidationError: duplicate image_id rows, image_id not in ids, malformed rows
    """
    try:
        df = pd.read_csv(
            path, sep='\t', header=None, names=['image_id', 'labels'],
            dtype=str, keep_default_na=False, quoting=csv.QUOTE_NONE, index_col=False,
            skip_blank_lines=True, encoding='utf-8',
        )
    except pd.errors.EmptyDataError:
        df = pd.DataFrame(columns=['image_id', 'labels'])
    except pd.errors.ParserError as e:
        raise SDLValidationError(f"{path}: malformed label file ({e})") from None
    df = df.fillna('')

    duplicated = df['image_id'][df['image_id'].duplicated()]
    if not duplicated.empty:
        raise SDLValidationError(f"{path}: duplicate image_id rows {sorted(set(duplicated))[:5]}")
    known = set(ids)
    unknown = [image_id for image_id in df['image_id'] if image_id not in known]
    if unknown:
        raise SDLValidationError(f"{path}: image ids not in feature file {unknown[:5]}")

    by_id = {row.image_id: _parse_label_list(row.labels) for row in df.itertuples(index=False)}
    labels = [by_id.get(image_id, frozenset()) for image_id in ids]
    logger.info(f"✓ Loaded labels for {len(by_id)} of {len(ids)} images from {path}")
    return labels


def write_labels(path, ids: Sequence[str], labels: Sequence[FrozenSet[str]]) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for image_id, y in zip(ids, labels):
            f.write(f"{image_id}\t{','.join(sorted(y))}\n")


# ==================== SPLITS ====================

def _read_label_lines(path) -> FrozenSet[str]:
    with open(path, 'r', encoding='utf-8') as f:
        return frozenset(canonicalize_label(line) for line in f if line.strip())


def load_split(seen_path, unseen_path) -> Tuple[FrozenSet[str], FrozenSet[str]]:
    """
    Read the seen / unseen tag lists

    Raises:
    SDLValidationError: overlapping sets or an empty seen set
    """
    seen = _read_label_lines(seen_path)
    unseen = _read_label_lines(unseen_path)
    if not seen:
        raise SDLValidationError(f"{seen_path}: seen tag set is empty")
    overlap = seen & unseen
    if overlap:
        raise SDLValidationError(f"tags listed as both seen and unseen: {sorted(overlap)[:5]}")
    logger.info(f"✓ Split loaded: {len(seen)} seen / {len(unseen)} unseen tags")
    return seen, unseen


def write_split(path, labels) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for label in sorted(labels):
            f.write(label + "\n")


def load_dataset(features_path, labels_path, seen_path, unseen_path) -> Dataset:
    ids, matrix = load_features(features_path)
    labels = load_labels(labels_path, ids)
    seen, unseen = load_split(seen_path, unseen_path)
    return Dataset(features=matrix, ids=ids, labels=labels, seen=seen, unseen=unseen)


# ==================== BATCHING & VIEWS ====================

def batches(dataset: Union[Dataset, int], batch_size: int, seed: int, epoch: int) -> List[np.ndarray]:
    """
    Seeded permutation of 0..N-1 for (seed, epoch), chunked; the last batch may be short
    """
    if batch_size < 1:
        raise SDLValidationError(f"batch_size must be >= 1, got {batch_size}")
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def holdout_split(dataset: Dataset, n_test: int, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Seeded train / test partition with n_test images held out"""
    if not 0 < n_test < len(dataset):
        raise SDLValidationError(f"n_test must be in (0, {len(dataset)}), got {n_test}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])
    return dataset.subset(train_idx), dataset.subset(test_idx)


def relevance_matrix(dataset: Dataset, tags: Sequence[str]) -> np.ndarray:
    """(N, |T|) boolean ground truth: tag j annotated on image i"""
    column = {tag: j for j, tag in enumerate(tags)}
    gt = np.zeros((len(dataset), len(tags)), dtype=bool)
    for i, y in enumerate(dataset.labels):
        for label in y:
            j = column.get(label)
            if j is not None:
                gt[i, j] = True
    return gt


def images_without_seen_labels(dataset: Dataset) -> List[str]:
    return [image_id for image_id, y in zip(dataset.ids, dataset.labels) if not (y & dataset.seen)]


def dataset_summary(dataset: Dataset, title: Optional[str] = None) -> dict:
    """
    Summary statistics of a dataset, in the same key/value style as the other steps

    Returns:
    dict: counts, label-per-image statistics and split sizes
    """
    counts = np.array([len(y) for y in dataset.labels]) if len(dataset) else np.zeros(0)
    seen_counts = np.array([len(y & dataset.seen) for y in dataset.labels]) if len(dataset) else np.zeros(0)
    summary = {
        'images': len(dataset),
        'feature_dim': dataset.d_f,
        'seen_tags': len(dataset.seen),
        'unseen_tags': len(dataset.unseen),
        'mean_labels_per_image': round(float(counts.mean()), 4) if counts.size else 0.0,
        'mean_seen_labels_per_image': round(float(seen_counts.mean()), 4) if seen_counts.size else 0.0,
        'labels_per_image_range': (int(counts.min()), int(counts.max())) if counts.size else (0, 0),
        'images_without_seen_labels': int(np.sum(seen_counts == 0)),
    }
    if title:
        summary = {'dataset': title, **summary}
    return summary
