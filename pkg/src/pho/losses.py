"""Training losses and their analytic gradients with respect to the feature inputs.

The alignment map passed to the class-consistency losses is always treated as
a constant: no gradient flows into it, mirroring the split between directly
optimized parameters and network weights. Euclidean norms are smoothed as
``sqrt(s + 1e-12)`` so gradients stay finite at zero.

Each ``*_parts`` function works on plain arrays and returns
``(value, d_visible, d_infrared)`` (or ``(value, d_logits)``); the thin public
wrappers accept the validated domain types and return values only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import ClassMeans, FeatureBatch, TransformMatrix
from .errors import EmptyFrameList, EmptyModality, LabelOutOfRange, NoValidClasses

logger = logging.getLogger(__name__)

EPS_NORM = 1e-12  # under the square root of every smoothed norm
GEM_EPS = 1e-6    # clamp floor for generalized-mean pooling


@dataclass(frozen=True)
class LossParams:
    """Hyperparameters of the full training objective."""

    beta: float = 0.5
    gamma: float = 1.0
    rho: float = 0.3
    lam: float = 1.0
    triplet_margin: float = 0.3
    mmd_bandwidths: tuple[float, ...] | None = None  # None -> median heuristic x {0.5,1,2,4}
    gem_p: float = 3.0

    def __post_init__(self):
        for name in ("beta", "gamma", "rho", "lam", "triplet_margin"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.mmd_bandwidths is not None:
            bw = tuple(float(b) for b in self.mmd_bandwidths)
            if not bw or any(b <= 0.0 for b in bw):
                raise ValueError("mmd_bandwidths must be a non-empty list of positive reals")
            object.__setattr__(self, "mmd_bandwidths", bw)
        if not self.gem_p >= 1.0:
            raise ValueError(f"gem_p must be >= 1, got {self.gem_p}")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-component values of one training step; l_total composes them."""

    l_id: float
    l_hc_tri: float
    l_mmd: float
    l_intra: float
    l_ccl: float
    l_total: float


def _smooth_norm(v: np.ndarray) -> tuple[float, np.ndarray]:
    """Smoothed Euclidean norm of a vector and its gradient."""
    norm = float(np.sqrt(v @ v + EPS_NORM))
    return norm, v / norm


def _row_norms(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.sum(r * r, axis=1) + EPS_NORM)
    return norms, r / norms[:, None]


def _split_by_class(labels: np.ndarray, class_ids: np.ndarray) -> list[np.ndarray]:
    return [np.flatnonzero(labels == cid) for cid in class_ids]


def _common_classes(vis_labels: np.ndarray, ir_labels: np.ndarray) -> np.ndarray:
    return np.intersect1d(np.unique(vis_labels), np.unique(ir_labels))


def intra_parts(a: np.ndarray, vis: np.ndarray, ir: np.ndarray,
                vis_labels: np.ndarray, ir_labels: np.ndarray,
                beta: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Intra-class compactness under the alignment map, with feature gradients.

    Per class: the mapped visible mean is pulled toward the infrared mean, and
    (weighted by beta) every mapped visible sample toward the infrared mean
    plus the mapped visible mean toward every infrared sample. Averaged over
    the classes present in both modalities.
    """
    cids = _common_classes(vis_labels, ir_labels)
    if cids.size == 0:
        raise NoValidClasses("intra-class loss needs at least one class with both modalities")
    d_vis = np.zeros_like(vis)
    d_ir = np.zeros_like(ir)
    total = 0.0
    for cid in cids:
        pi = np.flatnonzero(vis_labels == cid)
        qi = np.flatnonzero(ir_labels == cid)
        xc, yc = vis[pi], ir[qi]
        n_p, n_q = len(pi), len(qi)
        xbar = xc.mean(axis=0)
        ybar = yc.mean(axis=0)
        axbar = a @ xbar

        n1, u1 = _smooth_norm(axbar - ybar)
        d_vis[pi] += (a.T @ u1) / n_p
        d_ir[qi] += -u1 / n_q

        norms2, units2 = _row_norms(xc @ a.T - ybar)
        t2 = float(norms2.mean())
        d_vis[pi] += beta / n_p * (units2 @ a)
        d_ir[qi] += -beta / n_q * units2.mean(axis=0)

        norms3, units3 = _row_norms(axbar - yc)
        t3 = float(norms3.mean())
        d_vis[pi] += beta / n_p * (a.T @ units3.mean(axis=0))
        d_ir[qi] += -beta / n_q * units3

        total += n1 + beta * (t2 + t3)
    nc = float(cids.size)
    return total / nc, d_vis / nc, d_ir / nc


def intra_loss(a_star: TransformMatrix, classes: ClassMeans,
               per_sample: FeatureBatch, beta: float) -> float:
    """Intra-class loss over a batch; raises NoValidClasses on an empty partition."""
    if classes.num_classes == 0:
        raise NoValidClasses("no class has samples in both modalities")
    vis_mask = per_sample.visible_mask
    value, _, _ = intra_parts(
        a_star.entries,
        per_sample.features[vis_mask], per_sample.features[~vis_mask],
        per_sample.class_ids[vis_mask], per_sample.class_ids[~vis_mask],
        beta,
    )
    return value


def _min_cross_pair(a: np.ndarray, classes_x: np.ndarray, classes_y: np.ndarray
                    ) -> tuple[float, int, int, np.ndarray]:
    """Minimum mapped-visible-mean to infrared-mean distance over class pairs i != j."""
    mapped = classes_x @ a.T
    best = (np.inf, -1, -1, None)
    c = classes_x.shape[0]
    for i in range(c):
        for j in range(c):
            if i == j:
                continue
            d, u = _smooth_norm(mapped[i] - classes_y[j])
            if d < best[0]:
                best = (d, i, j, u)
    return best


def ccl_parts(a: np.ndarray, vis: np.ndarray, ir: np.ndarray,
              vis_labels: np.ndarray, ir_labels: np.ndarray,
              beta: float, gamma: float, rho: float
              ) -> tuple[float, np.ndarray, np.ndarray]:
    """Consistency loss: hinge of (rho + gamma * intra) against the inter-class minimum."""
    cids = _common_classes(vis_labels, ir_labels)
    if cids.size < 2:
        logger.warning("consistency loss skipped: %d valid class(es), need >= 2", cids.size)
        return 0.0, np.zeros_like(vis), np.zeros_like(ir)
    intra, g_vis, g_ir = intra_parts(a, vis, ir, vis_labels, ir_labels, beta)
    vis_groups = _split_by_class(vis_labels, cids)
    ir_groups = _split_by_class(ir_labels, cids)
    xbars = np.array([vis[g].mean(axis=0) for g in vis_groups])
    ybars = np.array([ir[g].mean(axis=0) for g in ir_groups])
    dmin, i_star, j_star, u_star = _min_cross_pair(a, xbars, ybars)
    margin = rho + gamma * intra - dmin
    if margin <= 0.0:
        return 0.0, np.zeros_like(vis), np.zeros_like(ir)
    d_vis = gamma * g_vis
    d_ir = gamma * g_ir
    pi = vis_groups[i_star]
    qj = ir_groups[j_star]
    d_vis[pi] -= (a.T @ u_star) / len(pi)
    d_ir[qj] += u_star / len(qj)
    return margin, d_vis, d_ir


def ccl_loss(a_star: TransformMatrix, classes: ClassMeans,
             per_sample: FeatureBatch, params: LossParams) -> float:
    """Consistency loss over a batch; 0 (with a logged diagnostic) below 2 classes."""
    if classes.num_classes < 2:
        logger.warning("consistency loss skipped: %d valid class(es), need >= 2",
                       classes.num_classes)
        return 0.0
    vis_mask = per_sample.visible_mask
    value, _, _ = ccl_parts(
        a_star.entries,
        per_sample.features[vis_mask], per_sample.features[~vis_mask],
        per_sample.class_ids[vis_mask], per_sample.class_ids[~vis_mask],
        params.beta, params.gamma, params.rho,
    )
    return value


def identity_parts(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if np.any(labels < 0) or np.any(labels >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    z = exp.sum(axis=1)
    log_probs = shifted - np.log(z)[:, None]
    value = float(-log_probs[np.arange(b), labels].mean())
    grad = exp / z[:, None]
    grad[np.arange(b), labels] -= 1.0
    return value, grad / b


def identity_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    return identity_parts(logits, labels)[0]


def hc_triplet_parts(vis: np.ndarray, ir: np.ndarray,
                     vis_labels: np.ndarray, ir_labels: np.ndarray,
                     margin: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Hetero-center triplet on per-class per-modality centers, with feature gradients.

    Every (class, modality) center anchors one hinge: its distance to the same
    class's other-modality center must beat the closest center of any other
    class (either modality) by the margin. Averaged over anchors.
    """
    cids = _common_classes(vis_labels, ir_labels)
    c = cids.size
    if c < 2:
        logger.warning("hetero-center triplet skipped: %d valid class(es), need >= 2", c)
        return 0.0, np.zeros_like(vis), np.zeros_like(ir)
    vis_groups = _split_by_class(vis_labels, cids)
    ir_groups = _split_by_class(ir_labels, cids)
    # centers[k]: k = 2*ci is the visible center of class ci, 2*ci + 1 the infrared one
    centers = np.empty((2 * c, vis.shape[1]))
    for ci in range(c):
        centers[2 * ci] = vis[vis_groups[ci]].mean(axis=0)
        centers[2 * ci + 1] = ir[ir_groups[ci]].mean(axis=0)
    d_centers = np.zeros_like(centers)
    total = 0.0
    for ci in range(c):
        for m in (0, 1):
            anchor = 2 * ci + m
            positive = 2 * ci + (1 - m)
            d_pos, u_pos = _smooth_norm(centers[anchor] - centers[positive])
            d_neg, u_neg, neg = np.inf, None, -1
            for k in range(2 * c):
                if k // 2 == ci:
                    continue
                d, u = _smooth_norm(centers[anchor] - centers[k])
                if d < d_neg:
                    d_neg, u_neg, neg = d, u, k
            hinge = margin + d_pos - d_neg
            if hinge > 0.0:
                total += hinge
                d_centers[anchor] += u_pos - u_neg
                d_centers[positive] += -u_pos
                d_centers[neg] += u_neg
    num_anchors = 2 * c
    total /= num_anchors
    d_centers /= num_anchors
    d_vis = np.zeros_like(vis)
    d_ir = np.zeros_like(ir)
    for ci in range(c):
        d_vis[vis_groups[ci]] += d_centers[2 * ci] / len(vis_groups[ci])
        d_ir[ir_groups[ci]] += d_centers[2 * ci + 1] / len(ir_groups[ci])
    return total, d_vis, d_ir


def hc_triplet_loss(classes: ClassMeans, margin: float) -> float:
    """Hetero-center triplet computed directly from precomputed class centers."""
    c = classes.num_classes
    if c < 2:
        logger.warning("hetero-center triplet skipped: %d valid class(es), need >= 2", c)
        return 0.0
    centers = np.empty((2 * c, classes.x_bar.shape[1]))
    centers[0::2] = classes.x_bar
    centers[1::2] = classes.y_bar
    total = 0.0
    for ci in range(c):
        for m in (0, 1):
            anchor = 2 * ci + m
            d_pos, _ = _smooth_norm(centers[anchor] - centers[2 * ci + (1 - m)])
            d_neg = np.inf
            for k in range(2 * c):
                if k // 2 != ci:
                    d_neg = min(d_neg, _smooth_norm(centers[anchor] - centers[k])[0])
            total += max(0.0, margin + d_pos - d_neg)
    return total / (2 * c)


def median_heuristic_bandwidths(vis: np.ndarray, ir: np.ndarray,
                                scales: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
                                ) -> tuple[float, ...]:
    """Median pairwise distance over the pooled sample, scaled; floor keeps it positive."""
    pooled = np.vstack([vis, ir])
    sq = np.sum(pooled * pooled, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * pooled @ pooled.T
    iu = np.triu_indices(pooled.shape[0], k=1)
    med = float(np.sqrt(np.maximum(np.median(d2[iu]), 0.0)))
    med = max(med, 1e-3)
    return tuple(s * med for s in scales)


def mmd_parts(vis: np.ndarray, ir: np.ndarray, bandwidths
              ) -> tuple[float, np.ndarray, np.ndarray]:
    """Multi-bandwidth RBF maximum-mean-discrepancy (biased squared estimator).

    Sums the per-bandwidth estimates; each is non-negative up to rounding and
    the reported value is clamped at zero.
    """
    vis = np.asarray(vis, dtype=np.float64)
    ir = np.asarray(ir, dtype=np.float64)
    if vis.shape[0] == 0 or ir.shape[0] == 0:
        raise EmptyModality("maximum mean discrepancy needs samples on both sides")
    m, n_ir = vis.shape[0], ir.shape[0]
    sq_v = np.sum(vis * vis, axis=1)
    sq_i = np.sum(ir * ir, axis=1)
    d_xx = np.maximum(sq_v[:, None] + sq_v[None, :] - 2.0 * vis @ vis.T, 0.0)
    d_yy = np.maximum(sq_i[:, None] + sq_i[None, :] - 2.0 * ir @ ir.T, 0.0)
    d_xy = np.maximum(sq_v[:, None] + sq_i[None, :] - 2.0 * vis @ ir.T, 0.0)
    value = 0.0
    d_vis = np.zeros_like(vis)
    d_ir = np.zeros_like(ir)
    for sigma in bandwidths:
        s2 = 2.0 * sigma * sigma
        k_xx = np.exp(-d_xx / s2)
        k_yy = np.exp(-d_yy / s2)
        k_xy = np.exp(-d_xy / s2)
        value += float(k_xx.mean() + k_yy.mean() - 2.0 * k_xy.mean())
        inv = 1.0 / (sigma * sigma)
        d_vis += (-2.0 / (m * m) * inv) * (k_xx.sum(axis=1)[:, None] * vis - k_xx @ vis)
        d_vis += (2.0 / (m * n_ir) * inv) * (k_xy.sum(axis=1)[:, None] * vis - k_xy @ ir)
        d_ir += (-2.0 / (n_ir * n_ir) * inv) * (k_yy.sum(axis=1)[:, None] * ir - k_yy @ ir)
        d_ir += (2.0 / (m * n_ir) * inv) * (k_xy.sum(axis=0)[:, None] * ir - k_xy.T @ vis)
    return max(value, 0.0), d_vis, d_ir


def mmd_loss(visible_feats: np.ndarray, infrared_feats: np.ndarray, bandwidths) -> float:
    return mmd_parts(visible_feats, infrared_feats, bandwidths)[0]


def gem_pool(frames, p: float) -> np.ndarray:
    """Generalized-mean pooling of frame features: ``(mean(max(f, eps)^p))^(1/p)``.

    p = 1 is the arithmetic mean of the clamped entries; large p approaches the
    per-dimension maximum. Computed against the per-dimension maximum so large
    exponents cannot overflow.
    """
    f = np.asarray(frames, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    if f.shape[0] == 0:
        raise EmptyFrameList("pooling needs at least one frame")
    if not np.all(np.isfinite(f)):
        raise ValueError("frames contain non-finite entries")
    if not p >= 1.0:
        raise ValueError(f"pooling exponent must be >= 1, got {p}")
    clamped = np.maximum(f, GEM_EPS)
    if p == 1.0:
        return clamped.mean(axis=0)
    peak = clamped.max(axis=0)
    return peak * np.mean((clamped / peak) ** p, axis=0) ** (1.0 / p)


def total_loss(embeddings: FeatureBatch, logits: np.ndarray,
               a_star: TransformMatrix | None, params: LossParams) -> LossBreakdown:
    """Compose the full objective: identity + hetero-center triplet + discrepancy
    plus ``lam`` times the consistency loss (alignment-dependent terms are zero
    when no map is supplied)."""
    vis_mask = embeddings.visible_mask
    vis = embeddings.features[vis_mask]
    ir = embeddings.features[~vis_mask]
    vl = embeddings.class_ids[vis_mask]
    il = embeddings.class_ids[~vis_mask]
    l_id = identity_loss(logits, embeddings.class_ids)
    l_hc, _, _ = hc_triplet_parts(vis, ir, vl, il, params.triplet_margin)
    bw = params.mmd_bandwidths or median_heuristic_bandwidths(vis, ir)
    l_mmd = mmd_loss(vis, ir, bw)
    if a_star is not None:
        l_intra, _, _ = intra_parts(a_star.entries, vis, ir, vl, il, params.beta)
        l_ccl, _, _ = ccl_parts(a_star.entries, vis, ir, vl, il,
                                params.beta, params.gamma, params.rho)
    else:
        l_intra = 0.0
        l_ccl = 0.0
    l_total = l_id + l_hc + l_mmd + params.lam * l_ccl
    return LossBreakdown(l_id=l_id, l_hc_tri=l_hc, l_mmd=l_mmd,
                         l_intra=l_intra, l_ccl=l_ccl, l_total=l_total)
