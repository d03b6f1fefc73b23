"""
Linear Head
===========

The trainable head that maps an image feature vector x (d_f) to its
embedding matrix A (M x d_w): A = reshape(W x + b), row-major.

Checkpoint layout (little-endian):
    magic "SDLM" | u32 version=1 | u32 M | u32 d_w | u32 d_f |
    W as (M*d_w) x d_f float32 row-major | b as M*d_w float32
"""

import logging
import os
import struct
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from DiversityLearning.sdl_core import VARIANTS
from DiversityLearning.sdl_errors import SDLValidationError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SDLM"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Head weights W ((M*d_w) x d_f), bias b (M*d_w) and their metadata"""
    W: np.ndarray
    b: np.ndarray
    M: int
    d_w: int
    d_f: int
    variant: str = "max"
    seed: int = 0

    def __post_init__(self):
        if min(self.M, self.d_w, self.d_f) < 1:
            raise SDLValidationError(
                f"dimensions must be positive, got M={self.M}, d_w={self.d_w}, d_f={self.d_f}"
            )
        if self.variant not in VARIANTS:
            raise SDLValidationError(f"unknown variant {self.variant!r}")
        if self.W.shape != (self.M * self.d_w, self.d_f):
            raise SDLValidationError(f"W has shape {self.W.shape}, expected {(self.M * self.d_w, self.d_f)}")
        if self.b.shape != (self.M * self.d_w,):
            raise SDLValidationError(f"b has shape {self.b.shape}, expected {(self.M * self.d_w,)}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise SDLValidationError("model parameters contain non-finite values")

    def as_float64(self) -> "ModelParams":
        return replace(self, W=self.W.astype(np.float64), b=self.b.astype(np.float64))

    def as_float32(self) -> "ModelParams":
        return replace(self, W=self.W.astype(np.float32), b=self.b.astype(np.float32))

    def arrays(self) -> dict:
        return {"W": self.W, "b": self.b}

    def with_arrays(self, arrays: dict) -> "ModelParams":
        return replace(self, W=arrays["W"], b=arrays["b"])


def init_params(M: int, d_w: int, d_f: int, seed: int = 0, variant: str = "max") -> ModelParams:
    """
    Seeded initialization: W ~ N(0, 1/d_f) i.i.d., b = 0, both float32

    Parameters:
    M (int): Number of principal directions (rows of A)
    d_w (int): Word-vector dimension
    d_f (int): Feature dimension
    seed (int): Generator seed; identical seeds give bit-identical params
    """
    if min(M, d_w, d_f) < 1:
        raise SDLValidationError(f"dimensions must be positive, got M={M}, d_w={d_w}, d_f={d_f}")
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, 1.0 / np.sqrt(d_f), size=(M * d_w, d_f)).astype(np.float32)
    b = np.zeros(M * d_w, dtype=np.float32)
    return ModelParams(W=W, b=b, M=M, d_w=d_w, d_f=d_f, variant=variant, seed=seed)


def forward(params: ModelParams, x) -> np.ndarray:
    """A = reshape(W x + b) into M x d_w (row-major), computed in float64"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.d_f,):
        raise SDLValidationError(f"feature vector has shape {x.shape}, expected ({params.d_f},)")
    flat = params.W.astype(np.float64, copy=False) @ x + params.b
    return flat.reshape(params.M, params.d_w)


def forward_batch(params: ModelParams, X) -> np.ndarray:
    """(N, d_f) features -> (N, M, d_w) embedding matrices"""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.d_f:
        raise SDLValidationError(f"feature matrix has shape {X.shape}, expected (N, {params.d_f})")
    flat = X @ params.W.astype(np.float64, copy=False).T + params.b
    return flat.reshape(X.shape[0], params.M, params.d_w)


def backward(params: ModelParams, x, grad_A) -> Tuple[np.ndarray, np.ndarray]:
    """Chain rule through the head: grad_W = vec(grad_A) xᵀ, grad_b = vec(grad_A)"""
    x = np.asarray(x, dtype=np.float64)
    grad_A = np.asarray(grad_A, dtype=np.float64)
    if x.shape != (params.d_f,):
        raise SDLValidationError(f"feature vector has shape {x.shape}, expected ({params.d_f},)")
    if grad_A.shape != (params.M, params.d_w):
        raise SDLValidationError(f"grad_A has shape {grad_A.shape}, expected {(params.M, params.d_w)}")
    g = grad_A.reshape(-1)
    return np.outer(g, x), g.copy()


def checkpoint_size(M: int, d_w: int, d_f: int) -> int:
    return _HEADER.size + 4 * (M * d_w * d_f + M * d_w)


def save_checkpoint(params: ModelParams, path) -> None:
    """Write params in the SDLM layout (float32, little-endian)"""
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, params.M, params.d_w, params.d_f)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(params.W, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(params.b, dtype="<f4").tobytes())
    logger.info(f"✓ Checkpoint saved to {path} (M={params.M}, d_w={params.d_w}, d_f={params.d_f})")


def load_checkpoint(path, expected_shape: Optional[Tuple[int, int, int]] = None,
                    variant: str = "max") -> ModelParams:
    """
    Read an SDLM checkpoint

    Parameters:
    path (str): Checkpoint file
    expected_shape (tuple): Optional (M, d_w, d_f) the caller requires
    variant (str): Scoring variant to attach (the file does not store it)

    Raises:
    SDLValidationError: bad magic, version mismatch, truncated file, shape mismatch
    """
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        raw = f.read()
    if size < _HEADER.size:
        raise SDLValidationError(f"{path}: truncated checkpoint header")
    magic, version, M, d_w, d_f = _HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise SDLValidationError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise SDLValidationError(f"{path}: unsupported checkpoint version {version}")
    if min(M, d_w, d_f) < 1:
        raise SDLValidationError(f"{path}: invalid dimensions M={M}, d_w={d_w}, d_f={d_f}")
    expected = checkpoint_size(M, d_w, d_f)
    if size < expected:
        raise SDLValidationError(f"{path}: truncated checkpoint ({size} of {expected} bytes)")
    if size > expected:
        raise SDLValidationError(f"{path}: {size - expected} trailing bytes after checkpoint payload")
    if expected_shape is not None and tuple(expected_shape) != (M, d_w, d_f):
        raise SDLValidationError(f"{path}: shape {(M, d_w, d_f)} does not match expected {tuple(expected_shape)}")

    n_w = M * d_w * d_f
    W = np.frombuffer(raw, dtype="<f4", count=n_w, offset=_HEADER.size).astype(np.float32)
    b = np.frombuffer(raw, dtype="<f4", count=M * d_w, offset=_HEADER.size + 4 * n_w).astype(np.float32)
    params = ModelParams(W=W.reshape(M * d_w, d_f), b=b, M=M, d_w=d_w, d_f=d_f, variant=variant)
    logger.info(f"✓ Checkpoint loaded from {path}")
    return params
