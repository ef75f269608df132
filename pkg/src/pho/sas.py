"""Self-adaptive alignment: closed-form ridge map between modality means.

The objective is ``||A x_bar - y_bar||^2 + alpha ||A||_F^2`` over square
matrices A; its unique minimizer is the scaled outer product
``A*_ij = y_bar_i x_bar_j / (sum_p x_bar_p^2 + alpha)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ModalityMeans, TransformMatrix
from .errors import DegenerateInput, DimensionMismatch


@dataclass(frozen=True)
class SasParams:
    """Ridge strength for the alignment solve; alpha >= 0."""

    alpha: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0.0):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")


def p1_objective(a: TransformMatrix, means: ModalityMeans, params: SasParams) -> float:
    """Alignment objective: squared residual of the mapped visible mean plus ridge."""
    if a.n != means.n:
        raise DimensionMismatch(f"transform is {a.n}x{a.n} but means have dimension {means.n}")
    r = a.entries @ means.x_bar - means.y_bar
    return float(r @ r + params.alpha * np.sum(a.entries * a.entries))


def solve_sas(means: ModalityMeans, params: SasParams) -> TransformMatrix:
    """Closed-form minimizer of the ridge alignment objective.

    Requires alpha > 0, or alpha = 0 with a nonzero visible mean (otherwise
    the denominator vanishes and DegenerateInput is raised). The result is
    rank <= 1 by construction; with a zero visible mean it is exactly zero.
    """
    xb, yb = means.x_bar, means.y_bar
    denom = float(xb @ xb) + params.alpha
    if denom == 0.0:
        raise DegenerateInput("alpha = 0 with zero visible mean: alignment map undefined")
    return TransformMatrix(np.outer(yb, xb) / denom)
