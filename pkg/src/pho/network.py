"""Two-stream encoder: modality-specific stems, shared trunk, classifier head.

A small fully connected network in float64 with hand-written backprop. Stems
and the first trunk layer use tanh; the final trunk layer is a linear map to
the embedding dimension, optionally followed by a smoothed L2 normalization
(``z / sqrt(||z||^2 + 1e-12)``) so alignment solvers see unit-scale features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FeatureBatch, Modality
from .errors import DimensionMismatch

EPS_NORM = 1e-12

STEM_KEYS = ("stem_v.W", "stem_v.b", "stem_r.W", "stem_r.b")
TRUNK_KEYS = ("trunk1.W", "trunk1.b", "trunk2.W", "trunk2.b")
HEAD_KEYS = ("head.W", "head.b")


@dataclass
class Encoder:
    """Parameter container plus architecture metadata."""

    params: dict[str, np.ndarray]
    input_dim: int
    hidden_dim: int
    embed_dim: int
    num_classes: int
    normalize: bool = True

    @classmethod
    def initialize(cls, input_dim: int, hidden_dim: int, embed_dim: int,
                   num_classes: int, rng: np.random.Generator,
                   normalize: bool = True) -> "Encoder":
        def layer(fan_in, fan_out):
            return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))

        params = {
            "stem_v.W": layer(input_dim, hidden_dim),
            "stem_v.b": np.zeros(hidden_dim),
            "stem_r.W": layer(input_dim, hidden_dim),
            "stem_r.b": np.zeros(hidden_dim),
            "trunk1.W": layer(hidden_dim, hidden_dim),
            "trunk1.b": np.zeros(hidden_dim),
            "trunk2.W": layer(hidden_dim, embed_dim),
            "trunk2.b": np.zeros(embed_dim),
            "head.W": layer(embed_dim, num_classes),
            "head.b": np.zeros(num_classes),
        }
        return cls(params=params, input_dim=input_dim, hidden_dim=hidden_dim,
                   embed_dim=embed_dim, num_classes=num_classes, normalize=normalize)

    def check_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())


@dataclass
class ForwardCache:
    """Activations kept for the backward pass."""

    x: np.ndarray
    vis_mask: np.ndarray
    a1: np.ndarray        # tanh(stem)
    a2: np.ndarray        # tanh(trunk1)
    z: np.ndarray         # raw embeddings
    embeddings: np.ndarray  # normalized (or raw) embeddings fed to head/losses
    logits: np.ndarray


def forward_pass(encoder: Encoder, x: np.ndarray, modalities: np.ndarray) -> ForwardCache:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != encoder.input_dim:
        raise DimensionMismatch(f"encoder expects input dim {encoder.input_dim}, got {x.shape[1]}")
    p = encoder.params
    vis_mask = np.asarray(modalities) == Modality.VISIBLE
    s = np.empty((x.shape[0], encoder.hidden_dim))
    s[vis_mask] = x[vis_mask] @ p["stem_v.W"] + p["stem_v.b"]
    s[~vis_mask] = x[~vis_mask] @ p["stem_r.W"] + p["stem_r.b"]
    a1 = np.tanh(s)
    a2 = np.tanh(a1 @ p["trunk1.W"] + p["trunk1.b"])
    z = a2 @ p["trunk2.W"] + p["trunk2.b"]
    if encoder.normalize:
        scale = np.sqrt(np.sum(z * z, axis=1) + EPS_NORM)
        emb = z / scale[:, None]
    else:
        emb = z
    logits = emb @ p["head.W"] + p["head.b"]
    return ForwardCache(x=x, vis_mask=vis_mask, a1=a1, a2=a2, z=z,
                        embeddings=emb, logits=logits)


def forward(encoder: Encoder, batch: FeatureBatch) -> tuple[FeatureBatch, np.ndarray]:
    """Encode a raw-input batch into an embedding batch plus class logits."""
    cache = forward_pass(encoder, batch.features, batch.modalities)
    emb = FeatureBatch(cache.embeddings, batch.modalities, batch.class_ids)
    return emb, cache.logits


def backward_pass(encoder: Encoder, cache: ForwardCache,
                  d_embed: np.ndarray, d_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the loss with respect to every encoder parameter.

    ``d_embed`` is the loss gradient at the (post-normalization) embeddings and
    ``d_logits`` at the logits.
    """
    p = encoder.params
    grads = {}
    grads["head.W"] = cache.embeddings.T @ d_logits
    grads["head.b"] = d_logits.sum(axis=0)
    d_emb = d_embed + d_logits @ p["head.W"].T
    if encoder.normalize:
        z = cache.z
        s2 = np.sum(z * z, axis=1) + EPS_NORM
        s = np.sqrt(s2)
        d_z = d_emb / s[:, None] - z * (np.sum(z * d_emb, axis=1) / (s2 * s))[:, None]
    else:
        d_z = d_emb
    grads["trunk2.W"] = cache.a2.T @ d_z
    grads["trunk2.b"] = d_z.sum(axis=0)
    d_a2 = d_z @ p["trunk2.W"].T
    d_t1 = d_a2 * (1.0 - cache.a2 * cache.a2)
    grads["trunk1.W"] = cache.a1.T @ d_t1
    grads["trunk1.b"] = d_t1.sum(axis=0)
    d_a1 = d_t1 @ p["trunk1.W"].T
    d_s = d_a1 * (1.0 - cache.a1 * cache.a1)
    vm = cache.vis_mask
    grads["stem_v.W"] = cache.x[vm].T @ d_s[vm]
    grads["stem_v.b"] = d_s[vm].sum(axis=0)
    grads["stem_r.W"] = cache.x[~vm].T @ d_s[~vm]
    grads["stem_r.b"] = d_s[~vm].sum(axis=0)
    return grads


@dataclass(frozen=True)
class LrSchedule:
    """Warm-up ramp followed by piecewise-constant decay.

    ``decay_points`` holds (epoch, factor) pairs; past an epoch the learning
    rate is ``base_lr * factor`` of the latest decay point reached.
    """

    base_lr: float = 0.1
    momentum: float = 0.9
    warmup_epochs: int = 1
    decay_points: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        pts = tuple((int(e), float(f)) for e, f in self.decay_points)
        epochs = [e for e, _ in pts]
        if epochs != sorted(epochs) or len(set(epochs)) != len(epochs):
            raise ValueError("decay epochs must be strictly increasing")
        if any(not (0.0 < f <= 1.0) for _, f in pts):
            raise ValueError("decay factors must lie in (0, 1]")
        object.__setattr__(self, "decay_points", pts)


def lr_at(schedule: LrSchedule, epoch: int, step_fraction: float = 0.0) -> float:
    """Learning rate at a fractional position inside an epoch."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    progress = epoch + step_fraction
    if progress < schedule.warmup_epochs:
        return schedule.base_lr * progress / schedule.warmup_epochs
    factor = 1.0
    for decay_epoch, decay_factor in schedule.decay_points:
        if epoch >= decay_epoch:
            factor = decay_factor
    return schedule.base_lr * factor


def sgd_momentum_step(params: dict[str, np.ndarray], velocity: dict[str, np.ndarray],
                      grads: dict[str, np.ndarray], lr: float, momentum: float) -> None:
    """In-place heavy-ball update: v <- mu v + g; p <- p - lr v."""
    for key, g in grads.items():
        v = velocity[key]
        v *= momentum
        v += g
        params[key] -= lr * v


def zero_velocity(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}
