"""
Gradient Checks
===============

Central finite-difference verification of every analytic gradient:
L_rank, L_reg and L_final with respect to A for each scoring variant, and the
end-to-end loss with respect to the head's W and b.

Instances whose argmax is within a small margin of switching rows (or, for
l2norm, whose ||A t|| is near zero) are non-differentiable up to the step size
and are excluded and counted.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from tqdm.auto import tqdm

from DiversityLearning.sdl_core import VARIANTS, LabelInstance, LossConfig, final_loss, rank_loss, reg_loss
from DiversityLearning.sdl_errors import SDLValidationError
from DiversityLearning.sdl_model import ModelParams, backward, forward

logger = logging.getLogger(__name__)

SUITES = ("rank", "reg", "final", "head")

GRID_M = (1, 3, 7)
GRID_DW = (8, 32)
GRID_POS = (1, 2, 5)
GRID_NEG = (3, 20)
HEAD_FEATURE_DIM = 3
HEAD_COORDINATES = 48


@dataclass(frozen=True)
class GradcheckConfig:
    n_instances: int = 100
    seed: int = 0
    h: float = 1e-5
    tolerance: float = 1e-4
    tie_margin: float = 1e-4
    lam: float = 0.3
    use_sdw: bool = True
    variants: Tuple[str, ...] = VARIANTS

    def __post_init__(self):
        object.__setattr__(self, 'variants', tuple(self.variants))
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise SDLValidationError(f"unknown variants {unknown}")
        if self.n_instances < 1:
            raise SDLValidationError(f"n_instances must be >= 1, got {self.n_instances}")
        if not self.h > 0:
            raise SDLValidationError(f"step h must be positive, got {self.h}")


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5,
                       indices: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Numerical gradient of scalar f at x by (f(x + h e_i) - f(x - h e_i)) / 2h

    With indices, only those flat coordinates are perturbed and the partials
    come back as a 1-D array in the same order.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    coords = np.arange(flat.size) if indices is None else np.asarray(indices, dtype=np.int64)
    out = np.zeros(coords.size)
    for j, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        out[j] = (up - down) / (2.0 * h)
    return out.reshape(x.shape) if indices is None else out


def relative_error(analytic, numeric) -> float:
    """||a - n|| / max(||a||, ||n||); 0 when both vanish"""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def is_degenerate(A: np.ndarray, inst: LabelInstance, variant: str, margin: float) -> bool:
    """True when a step of the given margin could change an argmax row or hit ||A t|| = 0"""
    T = np.vstack([inst.positives, inst.negatives])
    products = A @ T.T
    if variant == "l2norm" and np.any(np.sqrt(np.sum(products * products, axis=0)) < margin):
        return True
    if A.shape[0] == 1:
        return False
    top2 = np.sort(products, axis=0)[-2:]
    return bool(np.any(top2[1] - top2[0] < margin))


def instance_grid(variant: str) -> List[Tuple[int, int, int, int]]:
    """(M, d_w, |P|, |P̄|) combinations; fast0tag only takes M = 1"""
    rows = (1,) if variant == "fast0tag" else GRID_M
    return [(M, d_w, p, n) for d_w in GRID_DW for p in GRID_POS for n in GRID_NEG for M in rows]


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_instance(rng: np.random.Generator, M: int, d_w: int, n_pos: int,
                  n_neg: int) -> Tuple[np.ndarray, LabelInstance]:
    A = rng.normal(size=(M, d_w))
    return A, LabelInstance(_unit_rows(rng, n_pos, d_w), _unit_rows(rng, n_neg, d_w))


def _check_loss_suites(A, inst, cfg: LossConfig, h: float,
                       corrupt: Optional[Callable[[np.ndarray], np.ndarray]]) -> Dict[str, float]:
    corrupt = corrupt or (lambda g: g)
    errors = {}

    _, g = rank_loss(A, inst, cfg.use_sdw, cfg.variant)
    numeric = central_difference(lambda X: rank_loss(X, inst, cfg.use_sdw, cfg.variant)[0], A, h)
    errors["rank"] = relative_error(corrupt(g), numeric)

    _, g = reg_loss(A)
    numeric = central_difference(lambda X: reg_loss(X)[0], A, h)
    errors["reg"] = relative_error(corrupt(g), numeric)

    g = final_loss(A, inst, cfg).grad_A
    numeric = central_difference(lambda X: final_loss(X, inst, cfg).value, A, h)
    errors["final"] = relative_error(corrupt(g), numeric)
    return errors


def _check_head(rng, M, d_w, inst, cfg: LossConfig, h: float, margin: float,
                corrupt) -> Optional[float]:
    """
    Relative error of (grad_W, grad_b) through forward/backward, or None if degenerate

    The finite differences cover a seeded sample of HEAD_COORDINATES entries of
    the flattened [W, b] vector, or all of it when smaller.
    """
    W = rng.normal(0.0, 1.0 / np.sqrt(HEAD_FEATURE_DIM), size=(M * d_w, HEAD_FEATURE_DIM))
    b = rng.normal(0.0, 0.1, size=M * d_w)
    x = rng.normal(size=HEAD_FEATURE_DIM)
    params = ModelParams(W=W, b=b, M=M, d_w=d_w, d_f=HEAD_FEATURE_DIM, variant=cfg.variant)

    A = forward(params, x)
    if is_degenerate(A, inst, cfg.variant, margin * max(1.0, float(np.max(np.abs(x))))):
        return None
    gW, gb = backward(params, x, final_loss(A, inst, cfg).grad_A)

    theta = np.concatenate([W.ravel(), b])
    n_coords = min(HEAD_COORDINATES, theta.size)
    coords = np.sort(rng.choice(theta.size, size=n_coords, replace=False))

    def loss_of(theta_):
        arrays = {"W": theta_[:W.size].reshape(W.shape), "b": theta_[W.size:]}
        return final_loss(forward(params.with_arrays(arrays), x), inst, cfg).value

    numeric = central_difference(loss_of, theta, h, indices=coords)
    analytic = np.concatenate([gW.ravel(), gb.ravel()])[coords]
    corrupt = corrupt or (lambda g: g)
    return relative_error(corrupt(analytic), numeric)


def run_gradcheck(cfg: GradcheckConfig = GradcheckConfig(),
                  corrupt: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                  progress: bool = False) -> dict:
    """
    Run every suite for every variant over seeded instances

    Parameters:
    cfg (GradcheckConfig): Instance count, seed, step, tolerance and loss settings
    corrupt (callable): Applied to each analytic gradient before comparison;
                        a sign flip here must make the check fail
    progress (bool): Show a tqdm bar per variant

    Returns:
    dict: Per "variant/suite" checked / excluded counts and max relative error,
          the overall max relative error and the pass flag
    """
    results: Dict[str, dict] = {}
    for v_index, variant in enumerate(cfg.variants):
        grid = instance_grid(variant)
        errors: Dict[str, List[float]] = {suite: [] for suite in SUITES}
        excluded = {suite: 0 for suite in SUITES}

        for i in tqdm(range(cfg.n_instances), desc=f"gradcheck {variant}", disable=not progress):
            M, d_w, n_pos, n_neg = grid[i % len(grid)]
            rng = np.random.default_rng([cfg.seed, v_index, i])
            loss_cfg = LossConfig(variant=variant, lam=cfg.lam, use_sdw=cfg.use_sdw, M=M)
            A, inst = make_instance(rng, M, d_w, n_pos, n_neg)

            if is_degenerate(A, inst, variant, cfg.tie_margin):
                for suite in ("rank", "reg", "final"):
                    excluded[suite] += 1
            else:
                for suite, err in _check_loss_suites(A, inst, loss_cfg, cfg.h, corrupt).items():
                    errors[suite].append(err)

            head_err = _check_head(rng, M, d_w, inst, loss_cfg, cfg.h, cfg.tie_margin, corrupt)
            if head_err is None:
                excluded["head"] += 1
            else:
                errors["head"].append(head_err)

        for suite in SUITES:
            worst = max(errors[suite]) if errors[suite] else 0.0
            results[f"{variant}/{suite}"] = {
                "checked": len(errors[suite]),
                "excluded": excluded[suite],
                "max_rel_err": worst,
                "passed": worst < cfg.tolerance and len(errors[suite]) > 0,
            }
            marker = "✓" if results[f"{variant}/{suite}"]["passed"] else "✗"
            logger.info(
                f"{marker} {variant}/{suite}: max rel err {worst:.3e} over {len(errors[suite])} "
                f"instances ({excluded[suite]} excluded)"
            )

    overall = max((r["max_rel_err"] for r in results.values()), default=0.0)
    return {
        "tolerance": cfg.tolerance,
        "instances_per_variant": cfg.n_instances,
        "suites": results,
        "max_rel_err": overall,
        "passed": all(r["passed"] for r in results.values()),
    }


def gradcheck_summary(result: dict) -> dict:
    """Flat key/value view for print_summary"""
    summary = {key: value["max_rel_err"] for key, value in result["suites"].items()}
    summary["max_rel_err"] = result["max_rel_err"]
    summary["passed"] = result["passed"]
    return summary
