"""Retrieval evaluation: rank-k accuracy (CMC) and mean average precision.

Queries are compared to the gallery by Euclidean distance, optionally after
applying an alignment transform to the query side. Ties are broken by gallery
index so metrics are reproducible. Average precision sums precision at each
relevant rank with ``math.fsum`` so the result does not depend on accumulation
order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import FeatureBatch, TransformMatrix
from .errors import DimensionMismatch, QueryClassAbsent


@dataclass(frozen=True)
class RetrievalResult:
    cmc: np.ndarray           # (K,) rank-1..rank-K accuracies, non-decreasing
    map: float
    per_query_ap: np.ndarray  # (num_queries,)

    def rank(self, k: int) -> float:
        return float(self.cmc[k - 1])


def order_by_distance(distances: np.ndarray) -> np.ndarray:
    """Ascending-distance order with ties broken by index (stable sort)."""
    return np.argsort(distances, kind="stable")


def rank_gallery(query: np.ndarray, gallery: FeatureBatch,
                 transform: TransformMatrix | None = None) -> np.ndarray:
    """Gallery indices sorted by distance to the (optionally transformed) query."""
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (gallery.n,):
        raise DimensionMismatch(f"query has shape {q.shape}, gallery dimension is {gallery.n}")
    if transform is not None:
        if transform.n != gallery.n:
            raise DimensionMismatch(
                f"transform is {transform.n}x{transform.n}, gallery dimension is {gallery.n}")
        q = transform.entries @ q
    diff = gallery.features - q
    distances = np.sqrt(np.sum(diff * diff, axis=1))
    return order_by_distance(distances)


def _average_precision(relevant_in_order: np.ndarray) -> float:
    ranks = np.flatnonzero(relevant_in_order) + 1
    hits = np.arange(1, ranks.size + 1, dtype=np.float64)
    return math.fsum(hits / ranks) / ranks.size


def evaluate(queries: FeatureBatch, gallery: FeatureBatch,
             transform: TransformMatrix | None = None, k: int = 20) -> RetrievalResult:
    """CMC and mAP of a query batch against a gallery.

    Every query class must appear in the gallery; otherwise QueryClassAbsent
    names the missing class.
    """
    if queries.n != gallery.n:
        raise DimensionMismatch(f"queries have dimension {queries.n}, gallery {gallery.n}")
    gallery_classes = set(np.unique(gallery.class_ids).tolist())
    for cid in np.unique(queries.class_ids):
        if int(cid) not in gallery_classes:
            raise QueryClassAbsent(f"query class {int(cid)} never appears in the gallery")
    num_q = queries.num_items
    first_correct = np.empty(num_q, dtype=np.int64)
    aps = np.empty(num_q, dtype=np.float64)
    for qi in range(num_q):
        order = rank_gallery(queries.features[qi], gallery, transform)
        relevant = gallery.class_ids[order] == queries.class_ids[qi]
        first_correct[qi] = int(np.flatnonzero(relevant)[0]) + 1
        aps[qi] = _average_precision(relevant)
    cmc = np.array([np.count_nonzero(first_correct <= rank) / num_q
                    for rank in range(1, k + 1)])
    return RetrievalResult(cmc=cmc, map=math.fsum(aps) / num_q, per_query_ap=aps)


def metrics_to_dict(result: RetrievalResult, transform_note: str = "identity") -> dict:
    return {
        "cmc": [float(v) for v in result.cmc],
        "map": float(result.map),
        "per_query_ap": [float(v) for v in result.per_query_ap],
        "transform": transform_note,
    }


def write_metrics_json(path, result: RetrievalResult, transform_note: str = "identity") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(metrics_to_dict(result, transform_note), fh, indent=2)
        fh.write("\n")


def write_cmc_csv(path, result: RetrievalResult) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("k,cmc\n")
        for i, v in enumerate(result.cmc, start=1):
            fh.write(f"{i},{float(v)!r}\n")
