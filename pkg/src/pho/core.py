"""Shared domain types: feature batches, modality/class means, transforms, simplex weights.

All types validate their contents at construction (finite entries, consistent
dimensions) and are immutable afterwards; the wrapped arrays are marked
read-only so they can be shared across threads.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyModality

SIMPLEX_TOL = 1e-12


class Modality(enum.IntEnum):
    VISIBLE = 0
    INFRARED = 1

    @classmethod
    def from_tag(cls, tag: str) -> "Modality":
        if tag == "V":
            return cls.VISIBLE
        if tag == "I":
            return cls.INFRARED
        raise ValueError(f"unknown modality tag {tag!r} (expected 'V' or 'I')")

    @property
    def tag(self) -> str:
        return "V" if self is Modality.VISIBLE else "I"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def as_feature_vector(values) -> np.ndarray:
    """Validate and return a 1-D float64 feature vector (finite, n >= 1)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"feature vector must be 1-D and non-empty, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("feature vector contains non-finite entries")
    return _readonly(v.copy())


def check_same_dim(n: int, *arrays: np.ndarray) -> None:
    for a in arrays:
        if a.shape[-1] != n:
            raise DimensionMismatch(f"expected dimension {n}, got {a.shape[-1]}")


@dataclass(frozen=True)
class FeatureBatch:
    """A set of feature vectors with per-item modality tag and class label."""

    features: np.ndarray   # (num_items, n) float64
    modalities: np.ndarray  # (num_items,) Modality codes
    class_ids: np.ndarray   # (num_items,) int64, >= 0

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        mods = np.asarray(self.modalities, dtype=np.int64)
        cids = np.asarray(self.class_ids, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[1] < 1:
            raise ValueError(f"features must be (num_items, n) with n >= 1, got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite entries")
        if mods.shape != (feats.shape[0],) or cids.shape != (feats.shape[0],):
            raise ValueError("modalities/class_ids must have one entry per item")
        if not np.all((mods == Modality.VISIBLE) | (mods == Modality.INFRARED)):
            raise ValueError("modalities must be Modality codes (0 or 1)")
        if np.any(cids < 0):
            raise ValueError("class ids must be non-negative")
        object.__setattr__(self, "features", _readonly(feats))
        object.__setattr__(self, "modalities", _readonly(mods))
        object.__setattr__(self, "class_ids", _readonly(cids))

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def num_items(self) -> int:
        return self.features.shape[0]

    @property
    def visible_mask(self) -> np.ndarray:
        return self.modalities == Modality.VISIBLE

    @property
    def visible_features(self) -> np.ndarray:
        return self.features[self.visible_mask]

    @property
    def infrared_features(self) -> np.ndarray:
        return self.features[~self.visible_mask]

    @property
    def num_visible(self) -> int:
        return int(np.count_nonzero(self.visible_mask))

    @property
    def num_infrared(self) -> int:
        return self.num_items - self.num_visible

    def subset(self, indices) -> "FeatureBatch":
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureBatch(self.features[idx], self.modalities[idx], self.class_ids[idx])


@dataclass(frozen=True)
class ModalityMeans:
    """Per-modality arithmetic means of one batch (x_bar visible, y_bar infrared)."""

    x_bar: np.ndarray
    y_bar: np.ndarray

    def __post_init__(self):
        xb = np.asarray(self.x_bar, dtype=np.float64)
        yb = np.asarray(self.y_bar, dtype=np.float64)
        if xb.ndim != 1 or yb.shape != xb.shape:
            raise DimensionMismatch(f"mean vectors must share one shape, got {xb.shape} vs {yb.shape}")
        if not (np.all(np.isfinite(xb)) and np.all(np.isfinite(yb))):
            raise ValueError("means contain non-finite entries")
        object.__setattr__(self, "x_bar", _readonly(xb))
        object.__setattr__(self, "y_bar", _readonly(yb))

    @property
    def n(self) -> int:
        return self.x_bar.shape[0]


@dataclass(frozen=True)
class TransformMatrix:
    """The n-by-n alignment map applied to visible-side features."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"transform must be square n x n with n >= 1, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("transform contains non-finite entries")
        object.__setattr__(self, "entries", _readonly(a))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class SimplexWeights:
    """Diagonal feature weights as an n-vector on the probability simplex."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ValueError(f"weights must be a 1-D vector, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights contain non-finite entries")
        if np.any(w < 0.0) or np.any(w > 1.0):
            raise ValueError("weights must lie in [0, 1]")
        if abs(float(np.sum(w)) - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights must sum to 1 within {SIMPLEX_TOL}, got {np.sum(w)!r}")
        object.__setattr__(self, "w", _readonly(w))

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @classmethod
    def uniform(cls, n: int) -> "SimplexWeights":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class ClassMeans:
    """Per-class modality means, restricted to classes present in both modalities.

    ``dropped_classes`` counts the classes excluded for lacking one modality.
    """

    class_ids: np.ndarray  # (C,) sorted
    x_bar: np.ndarray      # (C, n) visible means
    y_bar: np.ndarray      # (C, n) infrared means
    n_p: np.ndarray        # (C,) visible counts
    n_q: np.ndarray        # (C,) infrared counts
    dropped_classes: int = 0

    def __post_init__(self):
        cids = np.asarray(self.class_ids, dtype=np.int64)
        xb = np.asarray(self.x_bar, dtype=np.float64)
        yb = np.asarray(self.y_bar, dtype=np.float64)
        np_ = np.asarray(self.n_p, dtype=np.int64)
        nq = np.asarray(self.n_q, dtype=np.int64)
        c = cids.shape[0]
        if xb.shape != yb.shape or xb.shape[0] != c or np_.shape != (c,) or nq.shape != (c,):
            raise ValueError("class mean arrays disagree on the number of classes")
        if c and (np.any(np_ < 1) or np.any(nq < 1)):
            raise ValueError("classes must have at least one sample per modality")
        if c and not (np.all(np.isfinite(xb)) and np.all(np.isfinite(yb))):
            raise ValueError("class means contain non-finite entries")
        object.__setattr__(self, "class_ids", _readonly(cids))
        object.__setattr__(self, "x_bar", _readonly(xb))
        object.__setattr__(self, "y_bar", _readonly(yb))
        object.__setattr__(self, "n_p", _readonly(np_))
        object.__setattr__(self, "n_q", _readonly(nq))

    @property
    def num_classes(self) -> int:
        return self.class_ids.shape[0]


def batch_means(batch: FeatureBatch) -> ModalityMeans:
    """Exact per-modality arithmetic means of one batch.

    Raises EmptyModality if either side has zero items.
    """
    vis = batch.visible_features
    ir = batch.infrared_features
    if vis.shape[0] == 0 or ir.shape[0] == 0:
        raise EmptyModality(
            f"batch has {vis.shape[0]} visible and {ir.shape[0]} infrared items; need >= 1 of each"
        )
    return ModalityMeans(vis.mean(axis=0), ir.mean(axis=0))


def class_means(batch: FeatureBatch) -> ClassMeans:
    """Per-class means for every class present in both modalities.

    Classes lacking either modality are dropped; the result may be empty.
    """
    vis_mask = batch.visible_mask
    all_ids = np.unique(batch.class_ids)
    kept, xs, ys, nps, nqs = [], [], [], [], []
    dropped = 0
    for cid in all_ids:
        sel = batch.class_ids == cid
        v = batch.features[sel & vis_mask]
        r = batch.features[sel & ~vis_mask]
        if v.shape[0] == 0 or r.shape[0] == 0:
            dropped += 1
            continue
        kept.append(cid)
        xs.append(v.mean(axis=0))
        ys.append(r.mean(axis=0))
        nps.append(v.shape[0])
        nqs.append(r.shape[0])
    n = batch.n
    if not kept:
        return ClassMeans(
            np.empty(0, dtype=np.int64), np.empty((0, n)), np.empty((0, n)),
            np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), dropped,
        )
    return ClassMeans(np.array(kept), np.array(xs), np.array(ys),
                      np.array(nps), np.array(nqs), dropped)
