"""Auto-weighted alignment: alternating minimization over (A, w) with w on the simplex.

The weighted objective is
``sum_i w_i^2 (sum_j A_ij x_bar_j - y_bar_i)^2 + alpha sum_ij A_ij^2``.
Both subproblems have closed forms: for fixed w, each row of A is a scaled
copy of x_bar; for fixed A, the weights are inverse to the per-dimension
squared alignment errors, restricted to dimensions with nonzero error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import ModalityMeans, SimplexWeights, TransformMatrix
from .errors import DegenerateInput, DimensionMismatch

logger = logging.getLogger(__name__)

# Errors below this are exact-underflow territory and treated as zero; anything
# larger legitimately participates in the inverse-error weighting.
ZERO_ERROR = 1e-300


@dataclass(frozen=True)
class AalParams:
    alpha: float = 0.1
    max_iters: int = 100
    tol: float = 1e-10

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0.0):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0.0:
            raise ValueError("tol must be > 0")


@dataclass(frozen=True)
class AalSolution:
    a_star: TransformMatrix
    w_star: SimplexWeights
    objective_trace: list[float] = field(default_factory=list)
    iterations: int = 0


def _weight_vector(w) -> np.ndarray:
    """Accept SimplexWeights or a raw vector (raw is test-only, e.g. all-ones)."""
    return np.asarray(getattr(w, "w", w), dtype=np.float64)


def p2_objective(a: TransformMatrix, w, means: ModalityMeans, alpha: float) -> float:
    """Weighted alignment objective in its expanded per-dimension form."""
    if a.n != means.n:
        raise DimensionMismatch(f"transform is {a.n}x{a.n} but means have dimension {means.n}")
    wv = _weight_vector(w)
    if wv.shape[0] != means.n:
        raise DimensionMismatch(f"weights have length {wv.shape[0]}, expected {means.n}")
    r = a.entries @ means.x_bar - means.y_bar
    return float(np.sum(wv * wv * r * r) + alpha * np.sum(a.entries * a.entries))


def solve_p21(w_hat, means: ModalityMeans, alpha: float) -> TransformMatrix:
    """Minimize the weighted objective over A with the weights fixed.

    Row i of the optimum is ``w_i^2 y_bar_i x_bar / (w_i^2 ||x_bar||^2 + alpha)``;
    rows with zero weight are exactly zero. Requires alpha > 0 whenever any
    weight is zero or the visible mean vanishes (zero denominator otherwise).
    """
    wv = _weight_vector(w_hat)
    xb, yb = means.x_bar, means.y_bar
    if wv.shape[0] != means.n:
        raise DimensionMismatch(f"weights have length {wv.shape[0]}, expected {means.n}")
    w2 = wv * wv
    s = float(xb @ xb)
    denom = w2 * s + alpha
    if np.any(denom == 0.0):
        raise DegenerateInput("alpha = 0 with a zero weight or zero visible mean: row undefined")
    return TransformMatrix((w2 * yb)[:, None] * xb[None, :] / denom[:, None])


def alignment_errors(a: TransformMatrix, means: ModalityMeans) -> np.ndarray:
    """Per-dimension squared residual of the mapped visible mean."""
    if a.n != means.n:
        raise DimensionMismatch(f"transform is {a.n}x{a.n} but means have dimension {means.n}")
    r = a.entries @ means.x_bar - means.y_bar
    return r * r


def solve_p22(errors) -> SimplexWeights:
    """Minimize ``sum_i w_i^2 E_i`` over the simplex, zeroing zero-error dimensions.

    For nonzero errors ``w_i = 1 / sum_{E_t != 0} (E_i / E_t)``, computed in the
    algebraically identical reciprocal form ``(1/E_i) / sum_t (1/E_t)`` to avoid
    overflow for widely scaled errors. An all-zero error vector means alignment
    is already perfect; uniform weights are returned deterministically.
    """
    e = np.asarray(errors, dtype=np.float64)
    if np.any(e < 0.0):
        raise ValueError("alignment errors must be non-negative")
    nonzero = e >= ZERO_ERROR
    if not np.any(nonzero):
        return SimplexWeights.uniform(e.shape[0])
    w = np.zeros_like(e)
    recip = 1.0 / e[nonzero]
    w[nonzero] = recip / np.sum(recip)
    return SimplexWeights(w)


def solve_aal(means: ModalityMeans, params: AalParams,
              w_init: SimplexWeights | None = None) -> AalSolution:
    """Alternate the two closed-form updates until the objective stalls.

    Each full iteration solves for A given w, records the objective, then
    solves for w given A and records it again, so the trace holds one value
    per half-step and is non-increasing. Stops when the within-iteration
    objective change drops below ``tol``, when a perfectly aligned iterate
    appears (all errors zero), or after ``max_iters`` iterations.
    """
    w = w_init if w_init is not None else SimplexWeights.uniform(means.n)
    if w.n != means.n:
        raise DimensionMismatch(f"w_init has length {w.n}, expected {means.n}")
    trace: list[float] = []
    a = None
    iterations = 0
    for _ in range(params.max_iters):
        a = solve_p21(w, means, params.alpha)
        after_a = p2_objective(a, w, means, params.alpha)
        trace.append(after_a)
        errs = alignment_errors(a, means)
        if not np.any(errs >= ZERO_ERROR):
            w = SimplexWeights.uniform(means.n)
            trace.append(p2_objective(a, w, means, params.alpha))
            iterations += 1
            break
        w = solve_p22(errs)
        after_w = p2_objective(a, w, means, params.alpha)
        trace.append(after_w)
        iterations += 1
        if abs(after_a - after_w) < params.tol:
            break
    logger.debug("aal converged in %d iterations, final objective %.3e", iterations, trace[-1])
    return AalSolution(a_star=a, w_star=w, objective_trace=trace, iterations=iterations)
