"""
Semantic Diversity Loss
=======================

Scoring and loss mathematics for per-image principal-direction matrices.

A per-image embedding matrix A (M x d_w, one principal direction per row)
ranks a tag with word vector t by r = max_m <A^m, t>. Training pushes the
positives' scores above the negatives' through a pairwise softplus ranking
loss, weighted by the semantic diversity of the positives, and regularizes the
spread of the rows. Three scoring variants are supported:

- "max"      : max over rows (the multi-direction model)
- "fast0tag" : the single-direction special case, M must be 1
- "l2norm"   : ||A t||_2, the multi-row baseline without the max

Every loss returns its exact gradient with respect to A. Argmax ties are
broken by the lowest row index and gradients are routed to that row only.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from DiversityLearning.sdl_errors import SDLValidationError

VARIANTS = ("max", "l2norm", "fast0tag")

# Type alias: an (M, d_w) float matrix whose rows are principal directions.
EmbeddingMatrix = np.ndarray


@dataclass(frozen=True, eq=False)
class LabelInstance:
    """Positive (|P| x d_w) and negative (|P̄| x d_w) tag vectors of one image"""
    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positives, dtype=np.float64))
        neg = np.atleast_2d(np.asarray(self.negatives, dtype=np.float64))
        if pos.size == 0 or neg.size == 0:
            raise SDLValidationError("a label instance needs at least one positive and one negative")
        if pos.shape[1] != neg.shape[1]:
            raise SDLValidationError(
                f"positive dim {pos.shape[1]} != negative dim {neg.shape[1]}"
            )
        object.__setattr__(self, 'positives', pos)
        object.__setattr__(self, 'negatives', neg)


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters: scoring variant, λ, SDW switch and row count M"""
    variant: str = "max"
    lam: float = 0.3
    use_sdw: bool = True
    M: int = 7

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SDLValidationError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.M < 1:
            raise SDLValidationError(f"M must be >= 1, got {self.M}")
        if self.variant == "fast0tag" and self.M != 1:
            raise SDLValidationError("the fast0tag variant requires M = 1")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise SDLValidationError(f"lambda must be a finite value >= 0, got {self.lam}")


@dataclass(frozen=True, eq=False)
class LossOutput:
    """Per-image L_final value, its gradient w.r.t. A, and the loss components"""
    value: float
    grad_A: np.ndarray
    l_rank: float
    l_reg: float
    omega_d: float


def _check_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise SDLValidationError(f"embedding matrix must be M x d_w with M >= 1, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise SDLValidationError("embedding matrix contains non-finite entries")
    return A


def _check_vectors(A: np.ndarray, T) -> np.ndarray:
    T = np.atleast_2d(np.asarray(T, dtype=np.float64))
    if T.shape[1] != A.shape[1]:
        raise SDLValidationError(f"vector dim {T.shape[1]} != matrix cols {A.shape[1]}")
    return T


def softplus(u):
    """log(1 + e^u) in the overflow-safe form max(u, 0) + log1p(e^-|u|)"""
    u = np.asarray(u, dtype=np.float64)
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


def sigmoid(u):
    u = np.asarray(u, dtype=np.float64)
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def score_many(A, T, variant: str = "max") -> Tuple[np.ndarray, np.ndarray]:
    """
    Score every row of T against A

    Args:
        A: (M, d_w) embedding matrix
        T: (n, d_w) tag vectors
        variant: "max" / "fast0tag" (max over rows) or "l2norm" (||A t||)

    Returns:
        (scores, rows): (n,) scores and (n,) argmax row indices (lowest index on
        ties); for l2norm the rows are still the max-product rows, reported for
        attribution only
    """
    A = _check_matrix(A)
    T = _check_vectors(A, T)
    products = A @ T.T  # (M, n)
    rows = np.argmax(products, axis=0)
    if variant == "l2norm":
        scores = np.sqrt(np.sum(products * products, axis=0))
    elif variant in ("max", "fast0tag"):
        scores = products[rows, np.arange(products.shape[1])]
    else:
        raise SDLValidationError(f"unknown variant {variant!r}")
    return scores, rows


def score(A, t, variant: str = "max") -> Tuple[float, int]:
    """
    Relevance score r = max_m <A^m, t> of one tag vector

    Returns:
        (value, argmax_row) with the lowest row index on ties
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 1:
        raise SDLValidationError("score expects a single vector")
    scores, rows = score_many(A, t[None, :], variant)
    return float(scores[0]), int(rows[0])


def pair_margin(A, p_j, n_k, variant: str = "max") -> float:
    """u_jk = score(A, n_k) - score(A, p_j)"""
    return score(A, n_k, variant)[0] - score(A, p_j, variant)[0]


def sdw(P) -> float:
    """
    Semantic diversity weight ω_d = 1 + Σ_i var({p_j[i]})

    Population variance (divisor |P|); exactly 1 for a single positive.
    """
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if P.size == 0:
        raise SDLValidationError("sdw needs at least one positive vector")
    if P.shape[0] == 1:
        return 1.0
    return 1.0 + float(np.sum(np.var(P, axis=0)))


def _score_gradient_terms(A: np.ndarray, T: np.ndarray, variant: str):
    products = A @ T.T
    rows = np.argmax(products, axis=0)
    if variant == "l2norm":
        norms = np.sqrt(np.sum(products * products, axis=0))
        safe = np.where(norms > 0, norms, 1.0)
        # zero subgradient where ||A t|| = 0
        directions = np.where(norms > 0, products / safe, 0.0)
        return norms, rows, directions
    return products[rows, np.arange(products.shape[1])], rows, None


def _accumulate(grad: np.ndarray, T: np.ndarray, coeffs: np.ndarray, rows, directions) -> None:
    """grad += Σ_t coeff_t · d score(A, t) / d A"""
    if directions is None:
        np.add.at(grad, rows, coeffs[:, None] * T)
    else:
        grad += (directions * coeffs[None, :]) @ T


def rank_loss(A, inst: LabelInstance, use_sdw: bool = True, variant: str = "max") -> Tuple[float, np.ndarray]:
    """
    Ranking loss L_rank = ω_d · (1/ω_n) · Σ_j Σ_k softplus(u_jk)

    ω_n = |P|·|P̄|, ω_d = sdw(P) when use_sdw else 1. ω_d depends only on the
    labels, so it contributes no gradient.

    Returns:
        (value, grad_A)
    """
    if variant not in VARIANTS:
        raise SDLValidationError(f"unknown variant {variant!r}")
    A = _check_matrix(A)
    P = _check_vectors(A, inst.positives)
    N = _check_vectors(A, inst.negatives)

    omega_d = sdw(P) if use_sdw else 1.0
    scale = omega_d / (P.shape[0] * N.shape[0])

    s_p, rows_p, dir_p = _score_gradient_terms(A, P, variant)
    s_n, rows_n, dir_n = _score_gradient_terms(A, N, variant)
    u = s_n[None, :] - s_p[:, None]  # (|P|, |P̄|)

    value = scale * float(np.sum(softplus(u)))
    weights = sigmoid(u) * scale

    grad = np.zeros_like(A)
    _accumulate(grad, N, weights.sum(axis=0), rows_n, dir_n)
    _accumulate(grad, P, -weights.sum(axis=1), rows_p, dir_p)
    return value, grad


def reg_loss(A) -> Tuple[float, np.ndarray]:
    """
    Row-variance regularizer L_reg = |Σ_c var({A[m, c]}_m)|

    Population variance over rows, per column. Invariant to adding the same
    row vector to every row. grad[m, c] = (2/M)(A[m, c] - μ_c).
    """
    A = _check_matrix(A)
    M = A.shape[0]
    if M == 1 or np.all(A == A[0]):
        return 0.0, np.zeros_like(A)
    centered = A - A.mean(axis=0)
    value = abs(float(np.sum(np.mean(centered * centered, axis=0))))
    return value, (2.0 / M) * centered


def effective_lambda(lam: float, n_negatives: int) -> float:
    """λ̃ = min(1, λ / |P̄|)"""
    if n_negatives < 1:
        raise SDLValidationError("λ̃ is undefined without negatives")
    return min(1.0, lam / n_negatives)


def final_loss(A, inst: LabelInstance, cfg: LossConfig) -> LossOutput:
    """
    Per-image L_final = (1 - λ̃)·L_rank + λ̃·L_reg with λ̃ = min(1, λ/|P̄|)
    """
    A = _check_matrix(A)
    if A.shape[0] != cfg.M:
        raise SDLValidationError(f"matrix has {A.shape[0]} rows, config expects M = {cfg.M}")
    l_rank, g_rank = rank_loss(A, inst, cfg.use_sdw, cfg.variant)
    l_reg, g_reg = reg_loss(A)
    lam_t = effective_lambda(cfg.lam, inst.negatives.shape[0])
    omega_d = sdw(inst.positives) if cfg.use_sdw else 1.0
    if lam_t == 0.0:
        return LossOutput(value=l_rank, grad_A=g_rank, l_rank=l_rank, l_reg=l_reg, omega_d=omega_d)
    return LossOutput(
        value=(1.0 - lam_t) * l_rank + lam_t * l_reg,
        grad_A=(1.0 - lam_t) * g_rank + lam_t * g_reg,
        l_rank=l_rank,
        l_reg=l_reg,
        omega_d=omega_d,
    )
