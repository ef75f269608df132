"""Synthetic cross-modality data and the feature CSV interchange format.

Each class has a prototype in input space; visible samples are noisy copies of
the prototype and infrared samples are noisy copies of the prototype pushed
through a fixed invertible linear map plus offset (the ground-truth modality
gap). The gallery split is visible-only and the query split infrared-only.

Feature CSV: header ``id,modality,f0,...,f{n-1}``, modality tag ``V`` or ``I``,
UTF-8, LF line endings, floats in shortest round-trip decimal form. The parser
rejects any deviation and names the offending line.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .core import FeatureBatch, Modality
from .errors import DimensionMismatch, InvalidSpec, ParseError, UnknownModality
from .losses import GEM_EPS, gem_pool


@dataclass(frozen=True)
class ModalityMap:
    """Invertible linear map plus offset applied to infrared prototypes."""

    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        o = np.asarray(self.offset, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidSpec(f"modality map matrix must be square, got {m.shape}")
        if o.shape != (m.shape[0],):
            raise InvalidSpec("modality map offset must match the matrix dimension")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(o))):
            raise InvalidSpec("modality map contains non-finite entries")
        if np.linalg.matrix_rank(m) < m.shape[0]:
            raise InvalidSpec("modality map matrix must be invertible")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "offset", o)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.matrix.T + self.offset

    @classmethod
    def identity(cls, dim: int) -> "ModalityMap":
        return cls(np.eye(dim), np.zeros(dim))


def default_modality_map(input_dim: int, rng: np.random.Generator) -> ModalityMap:
    """A seeded anisotropic gap: rotation times per-dimension scaling plus offset.

    Half of the dimensions get mild scaling, the rest a much wider range, so
    alignment quality genuinely varies across feature dimensions.
    """
    q, _ = np.linalg.qr(rng.standard_normal((input_dim, input_dim)))
    mild = rng.uniform(0.85, 1.15, size=(input_dim + 1) // 2)
    wild = rng.uniform(0.35, 2.0, size=input_dim // 2)
    scales = rng.permutation(np.concatenate([mild, wild]))
    offset = rng.normal(0.0, 1.0, size=input_dim)
    return ModalityMap(q @ np.diag(scales), offset)


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 10
    samples_per_class_per_modality: int = 20
    input_dim: int = 12
    noise_sigma: float = 0.35
    modality_map: ModalityMap | None = None  # None -> seeded default map
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidSpec(f"num_classes must be >= 2, got {self.num_classes}")
        if self.samples_per_class_per_modality < 1:
            raise InvalidSpec("samples_per_class_per_modality must be >= 1")
        if self.input_dim < 1:
            raise InvalidSpec("input_dim must be >= 1")
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma >= 0.0):
            raise InvalidSpec(f"noise_sigma must be finite and >= 0, got {self.noise_sigma}")
        if self.modality_map is not None and self.modality_map.matrix.shape[0] != self.input_dim:
            raise InvalidSpec("modality_map dimension disagrees with input_dim")


@dataclass(frozen=True)
class TrackletSpec:
    frames_per_tracklet: int = 12
    tracklets_per_identity_per_modality: int = 2
    frame_jitter_sigma: float = 0.01

    def __post_init__(self):
        if self.frames_per_tracklet < 1:
            raise InvalidSpec("frames_per_tracklet must be >= 1")
        if self.tracklets_per_identity_per_modality < 1:
            raise InvalidSpec("tracklets_per_identity_per_modality must be >= 1")
        if not (np.isfinite(self.frame_jitter_sigma) and self.frame_jitter_sigma >= 0.0):
            raise InvalidSpec("frame_jitter_sigma must be finite and >= 0")


def _make_batch(features, modalities, class_ids) -> FeatureBatch:
    return FeatureBatch(np.array(features), np.array(modalities, dtype=np.int64),
                        np.array(class_ids, dtype=np.int64))


def generate(spec: SynthSpec) -> tuple[FeatureBatch, FeatureBatch, FeatureBatch]:
    """Draw (train, gallery, query) splits; pure function of the spec.

    Train holds both modalities; gallery is visible-only and query
    infrared-only. All splits use fresh noise draws so they are disjoint by
    sample.
    """
    rng = np.random.default_rng(spec.seed)
    mmap = spec.modality_map or default_modality_map(spec.input_dim, rng)
    protos = rng.standard_normal((spec.num_classes, spec.input_dim))
    ir_protos = mmap(protos)
    k = spec.samples_per_class_per_modality

    def noisy(base, count):
        return base + spec.noise_sigma * rng.standard_normal((count, spec.input_dim))

    train_f, train_m, train_c = [], [], []
    gal_f, gal_c = [], []
    qry_f, qry_c = [], []
    for cid in range(spec.num_classes):
        train_f.append(noisy(protos[cid], k))
        train_m.extend([Modality.VISIBLE] * k)
        train_c.extend([cid] * k)
        train_f.append(noisy(ir_protos[cid], k))
        train_m.extend([Modality.INFRARED] * k)
        train_c.extend([cid] * k)
        gal_f.append(noisy(protos[cid], k))
        gal_c.extend([cid] * k)
        qry_f.append(noisy(ir_protos[cid], k))
        qry_c.extend([cid] * k)
    train = _make_batch(np.vstack(train_f), train_m, train_c)
    gallery = _make_batch(np.vstack(gal_f), [Modality.VISIBLE] * len(gal_c), gal_c)
    query = _make_batch(np.vstack(qry_f), [Modality.INFRARED] * len(qry_c), qry_c)
    return train, gallery, query


@dataclass(frozen=True)
class TrackletBatch:
    """Frame sequences sharing one base sample each, plus per-tracklet labels."""

    frames: tuple[np.ndarray, ...]  # each (T, n)
    modalities: np.ndarray
    class_ids: np.ndarray

    def pooled(self, p: float) -> FeatureBatch:
        pooled = np.array([gem_pool(f, p) for f in self.frames])
        return FeatureBatch(pooled, self.modalities, self.class_ids)


def generate_tracklets(spec: SynthSpec, tspec: TrackletSpec) -> TrackletBatch:
    """Tracklet-structured samples: per tracklet one base vector plus frame jitter.

    Base vectors take the absolute value of the usual sample model so pooled
    activations stay in generalized-mean range (pooling clamps at its floor).
    """
    rng = np.random.default_rng(spec.seed)
    mmap = spec.modality_map or default_modality_map(spec.input_dim, rng)
    protos = rng.standard_normal((spec.num_classes, spec.input_dim))
    ir_protos = mmap(protos)
    frames, mods, cids = [], [], []
    t = tspec.frames_per_tracklet
    for cid in range(spec.num_classes):
        for modality, base_proto in ((Modality.VISIBLE, protos[cid]),
                                     (Modality.INFRARED, ir_protos[cid])):
            for _ in range(tspec.tracklets_per_identity_per_modality):
                base = np.abs(base_proto + spec.noise_sigma
                              * rng.standard_normal(spec.input_dim))
                jitter = tspec.frame_jitter_sigma * rng.standard_normal((t, spec.input_dim))
                frames.append(base + jitter)
                mods.append(modality)
                cids.append(cid)
    return TrackletBatch(frames=tuple(frames),
                         modalities=np.array(mods, dtype=np.int64),
                         class_ids=np.array(cids, dtype=np.int64))


def write_features(path, batch: FeatureBatch) -> None:
    """Serialize a batch in the canonical CSV form (byte-stable round trips)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        header = "id,modality," + ",".join(f"f{i}" for i in range(batch.n))
        fh.write(header + "\n")
        for i in range(batch.num_items):
            tag = Modality(int(batch.modalities[i])).tag
            values = ",".join(repr(float(v)) for v in batch.features[i])
            fh.write(f"{int(batch.class_ids[i])},{tag},{values}\n")


def load_features(path) -> FeatureBatch:
    """Parse a feature CSV; every deviation raises ParseError naming the line."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(f"{path}: line 1: empty file")
    header = lines[0].split(",")
    if header[:2] != ["id", "modality"] or len(header) < 3:
        raise ParseError(f"{path}: line 1: header must be 'id,modality,f0,...'")
    n = len(header) - 2
    if header[2:] != [f"f{i}" for i in range(n)]:
        raise ParseError(f"{path}: line 1: feature columns must be f0..f{n - 1}")
    feats, mods, cids = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != n + 2:
            raise ParseError(f"{path}: line {lineno}: expected {n + 2} fields, got {len(fields)}")
        try:
            cid = int(fields[0])
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: id {fields[0]!r} is not an integer") from None
        if cid < 0:
            raise ParseError(f"{path}: line {lineno}: id must be non-negative")
        try:
            modality = Modality.from_tag(fields[1])
        except ValueError as exc:
            raise UnknownModality(f"{path}: line {lineno}: {exc}") from None
        try:
            row = [float(v) for v in fields[2:]]
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: non-numeric feature value") from None
        if not all(np.isfinite(v) for v in row):
            raise ParseError(f"{path}: line {lineno}: non-finite feature value")
        feats.append(row)
        mods.append(modality)
        cids.append(cid)
    if not feats:
        raise ParseError(f"{path}: line 2: file has a header but no rows")
    return _make_batch(np.array(feats), mods, cids)


def write_matrix_csv(path, matrix: np.ndarray) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in np.atleast_2d(m):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh.read().splitlines(), start=1):
            if not line:
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: non-numeric matrix entry") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ParseError(f"{path}: matrix rows are missing or ragged")
    return np.array(rows)


def write_vector_csv(path, vector: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in np.asarray(vector, dtype=np.float64):
            fh.write(repr(float(v)) + "\n")


def load_vector_csv(path) -> np.ndarray:
    m = load_matrix_csv(path)
    if m.shape[1] != 1:
        raise ParseError(f"{path}: expected one value per line")
    return m[:, 0]


def batch_digest(batch: FeatureBatch) -> str:
    """SHA-256 over the canonical serialization; identifies shared data across runs."""
    h = hashlib.sha256()
    h.update(str(batch.n).encode())
    for i in range(batch.num_items):
        h.update(f"{int(batch.class_ids[i])},{int(batch.modalities[i])}".encode())
        h.update(batch.features[i].tobytes())
    return h.hexdigest()


GEM_CLAMP = GEM_EPS


def check_dims(batch: FeatureBatch, expected: int) -> None:
    if batch.n != expected:
        raise DimensionMismatch(f"batch dimension {batch.n} != expected {expected}")
