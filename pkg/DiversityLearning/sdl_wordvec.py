"""
Word Vector Tables
==================

Parsing, validation and lookup of FastText `.vec` word-vector tables.
This module contains functions for:
- Reading the text format (`<count> <dim>` header, one `<token> <f1> ... <f_dim>` per line)
- l2-normalizing every vector at load time
- Canonicalizing labels (lowercase, whitespace -> underscore)
- Resolving labels, including multi-token labels, to unit vectors
- Writing a table back to `.vec` text
"""

import io
import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from DiversityLearning.sdl_errors import SDLValidationError

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-6


def canonicalize_label(label: str) -> str:
    """Lowercase a label and map whitespace runs to a single underscore"""
    return re.sub(r'\s+', '_', str(label).strip().lower())


@dataclass(frozen=True, eq=False)
class WordVecTable:
    """
    Immutable label -> unit vector table

    Attributes:
        dim: Word-vector dimension d_w
        labels: Canonical labels in file order
        vectors: (len(labels), dim) float64 matrix, every row unit-norm
    """
    dim: int
    labels: List[str]
    vectors: np.ndarray
    index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim <= 0:
            raise SDLValidationError(f"word-vector dimension must be positive, got {self.dim}")
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape != (len(self.labels), self.dim):
            raise SDLValidationError(
                f"vector matrix shape {vectors.shape} does not match "
                f"{len(self.labels)} labels x dim {self.dim}"
            )
        if not np.all(np.isfinite(vectors)):
            raise SDLValidationError("word-vector table contains non-finite values")
        if len(vectors):
            norms = np.linalg.norm(vectors, axis=1)
            if np.any(np.abs(norms - 1.0) > NORM_TOLERANCE):
                raise SDLValidationError("word-vector table rows must be unit-norm")

        index = {}
        for i, label in enumerate(self.labels):
            if label != canonicalize_label(label):
                raise SDLValidationError(f"label {label!r} is not in canonical form")
            if label in index:
                raise SDLValidationError(f"duplicate label {label!r}")
            index[label] = i

        vectors.setflags(write=False)
        object.__setattr__(self, 'vectors', vectors)
        object.__setattr__(self, 'labels', list(self.labels))
        object.__setattr__(self, 'index', index)

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return canonicalize_label(label) in self.index


def build_table(entries: Dict[str, Sequence[float]]) -> WordVecTable:
    """
    Build a table from raw (not necessarily normalized) vectors

    Parameters:
    entries (dict): label -> vector; labels are canonicalized, vectors normalized

    Returns:
    WordVecTable: The validated table
    """
    if not entries:
        raise SDLValidationError("cannot build an empty word-vector table")
    labels, rows = [], []
    for label, vec in entries.items():
        labels.append(canonicalize_label(label))
        rows.append(_normalize(np.asarray(vec, dtype=np.float64), label))
    matrix = np.vstack(rows)
    return WordVecTable(dim=matrix.shape[1], labels=labels, vectors=matrix)


def _normalize(vec: np.ndarray, label: str) -> np.ndarray:
    if not np.all(np.isfinite(vec)):
        raise SDLValidationError(f"non-finite value in vector for {label!r}")
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise SDLValidationError(f"zero-norm vector for {label!r}")
    return vec / norm


def parse_vec_file(path) -> WordVecTable:
    """
    Parse a FastText `.vec` text file into a normalized WordVecTable

    Parameters:
    path (str): Path to a UTF-8 `.vec` file

    Returns:
    WordVecTable: Table with exactly the parsed entries, each l2-normalized

    Raises:
    SDLValidationError: malformed header, wrong token count, non-finite value,
                        duplicate token after canonicalization, zero-norm vector
    """
    with io.open(path, 'r', encoding='utf-8', newline='\n') as fin:
        header = fin.readline()
        parts = header.split()
        if len(parts) != 2 or not all(p.isdigit() for p in parts):
            raise SDLValidationError(f"{path}: malformed header {header.strip()!r}")
        count, dim = map(int, parts)
        if dim <= 0:
            raise SDLValidationError(f"{path}: dimension must be positive")

        labels: List[str] = []
        rows: List[np.ndarray] = []
        seen = set()
        for line_no, line in enumerate(fin, start=2):
            tokens = line.rstrip().split(' ')
            if len(tokens) != dim + 1:
                raise SDLValidationError(
                    f"{path}:{line_no}: expected {dim + 1} fields, found {len(tokens)}"
                )
            label = canonicalize_label(tokens[0])
            if not label:
                raise SDLValidationError(f"{path}:{line_no}: empty token")
            if label in seen:
                raise SDLValidationError(f"{path}:{line_no}: duplicate token {label!r}")
            try:
                vec = np.array([float(v) for v in tokens[1:]], dtype=np.float64)
            except ValueError:
                raise SDLValidationError(f"{path}:{line_no}: unparsable value") from None
            rows.append(_normalize(vec, label))
            labels.append(label)
            seen.add(label)

    if len(labels) != count:
        raise SDLValidationError(f"{path}: header announces {count} entries, found {len(labels)}")

    matrix = np.vstack(rows) if rows else np.zeros((0, dim))
    table = WordVecTable(dim=dim, labels=labels, vectors=matrix)
    logger.info(f"✓ Loaded {len(table)} word vectors (d_w={dim}) from {path}")
    return table


def write_vec_file(table: WordVecTable, path) -> None:
    """Write a table as `.vec` text using shortest round-trip float formatting"""
    with io.open(path, 'w', encoding='utf-8', newline='\n') as fout:
        fout.write(f"{len(table)} {table.dim}\n")
        for label, vec in zip(table.labels, table.vectors):
            fout.write(label + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def lookup_label(table: WordVecTable, label: str) -> np.ndarray:
    """
    Resolve a label to its unit vector

    An exact match after canonicalization wins. Otherwise a multi-token label
    resolves to the normalized mean of its tokens' vectors, provided every
    token is in the table.

    Raises:
    SDLValidationError: label (or any of its tokens) not in the table
    """
    key = canonicalize_label(label)
    if key in table.index:
        return table.vectors[table.index[key]].copy()

    tokens = [t for t in key.split('_') if t]
    if len(tokens) > 1:
        missing = [t for t in tokens if t not in table.index]
        if missing:
            raise SDLValidationError(f"label {label!r}: tokens {missing} not in word-vector table")
        mean = table.vectors[[table.index[t] for t in tokens]].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            raise SDLValidationError(f"label {label!r}: token vectors cancel out")
        return mean / norm

    raise SDLValidationError(f"label {label!r} not in word-vector table")


def lookup_labels(table: WordVecTable, labels: Sequence[str]) -> np.ndarray:
    if not labels:
        return np.zeros((0, table.dim))
    return np.vstack([lookup_label(table, label) for label in labels])
