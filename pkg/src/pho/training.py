"""Two-phase training loop: per-batch analytic alignment, gradient descent for the rest.

Every batch first solves the alignment parameters (the transform, and the
simplex weights in auto-weighted mode) in closed form from the batch embedding
means; those arrays are constants for the step. The remaining parameters are
updated by SGD with momentum on the composed loss. In ``learned-a`` mode the
transform instead joins the gradient-trained parameters, driven by the
alignment objective added as a penalty; ``baseline`` uses no transform at all.

Retrieval metrics compare raw embeddings (no transform): the solved map is
rank-1 and exists to shape training, not to project queries at test time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .aal import AalParams, solve_aal
from .core import FeatureBatch, ModalityMeans
from .errors import ConfigError, NonFiniteLoss
from .evaluation import RetrievalResult, evaluate
from .losses import (LossBreakdown, LossParams, ccl_parts, hc_triplet_parts,
                     identity_parts, intra_parts, median_heuristic_bandwidths, mmd_parts)
from .network import (Encoder, LrSchedule, backward_pass, forward_pass, lr_at,
                      sgd_momentum_step, zero_velocity)
from .sas import SasParams, solve_sas

logger = logging.getLogger(__name__)

MODES = ("baseline", "learned-a", "sas", "aal")
CCL_MODES = ("sas", "aal")

HISTORY_COLUMNS = ("epoch", "lr", "l_id", "l_hc_tri", "l_mmd", "l_intra",
                   "l_ccl", "l_align", "l_total", "rank1", "rank5", "rank10",
                   "rank20", "map")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainSettings:
    """Everything the loop needs besides the data: mode plus hyperparameters."""

    mode: str = "sas"
    alpha: float = 0.1
    aal_max_iters: int = 100
    aal_tol: float = 1e-10
    loss: LossParams = field(default_factory=LossParams)
    schedule: LrSchedule = field(default_factory=LrSchedule)
    epochs: int = 20
    ids_per_batch: int = 4
    samples_per_id: int = 4
    hidden_dim: int = 16
    embed_dim: int = 8
    normalize_embeddings: bool = True
    eval_k: int = 20

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode not in CCL_MODES and self.loss.lam != 0.0:
            raise ConfigError(
                f"lambda = {self.loss.lam} is only meaningful with modes {CCL_MODES}; "
                f"set it to 0 for mode {self.mode!r}")
        for name in ("epochs", "ids_per_batch", "samples_per_id", "hidden_dim",
                     "embed_dim", "eval_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class TrainState:
    encoder: Encoder
    velocity: dict[str, np.ndarray]
    epoch: int
    rng: np.random.Generator
    history: list[dict] = field(default_factory=list)
    mode: str = "sas"
    global_batch: int = 0
    last_direct: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class ParameterPartition:
    direct: dict[str, tuple[int, ...]]
    non_direct: dict[str, tuple[int, ...]]

    @staticmethod
    def _count(shapes: dict[str, tuple[int, ...]]) -> int:
        return int(sum(np.prod(s, dtype=np.int64) for s in shapes.values()))

    @property
    def direct_count(self) -> int:
        return self._count(self.direct)

    @property
    def non_direct_count(self) -> int:
        return self._count(self.non_direct)

    @property
    def total_count(self) -> int:
        return self.direct_count + self.non_direct_count


def partition_parameters(state: TrainState) -> ParameterPartition:
    """Split every trainable scalar into the analytic set and the SGD set.

    The alignment transform (n x n) and simplex weights (n) are analytic,
    except in ``learned-a`` mode where the transform lives among the SGD
    parameters. The partition is static across training.
    """
    n = state.encoder.embed_dim
    non_direct = {k: v.shape for k, v in state.encoder.params.items()}
    direct = {"align.w": (n,)}
    if state.mode != "learned-a":
        direct["align.A"] = (n, n)
    return ParameterPartition(direct=direct, non_direct=non_direct)


def init_state(train: FeatureBatch, settings: TrainSettings, seed: int) -> TrainState:
    rng = np.random.default_rng(seed)
    num_classes = int(np.unique(train.class_ids).size)
    encoder = Encoder.initialize(train.n, settings.hidden_dim, settings.embed_dim,
                                 num_classes, rng,
                                 normalize=settings.normalize_embeddings)
    if settings.mode == "learned-a":
        encoder.params["align.A"] = np.eye(settings.embed_dim)
    return TrainState(encoder=encoder, velocity=zero_velocity(encoder.params),
                      epoch=0, rng=rng, mode=settings.mode)


def _class_pools(batch: FeatureBatch) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    vis_mask = batch.visible_mask
    cids = np.unique(batch.class_ids)
    keep, vis_pools, ir_pools = [], [], []
    for cid in cids:
        sel = batch.class_ids == cid
        v = np.flatnonzero(sel & vis_mask)
        r = np.flatnonzero(sel & ~vis_mask)
        if v.size and r.size:
            keep.append(cid)
            vis_pools.append(v)
            ir_pools.append(r)
    return np.array(keep), vis_pools, ir_pools


def draw_batches(batch: FeatureBatch, rng: np.random.Generator,
                 ids_per_batch: int, samples_per_id: int) -> list[np.ndarray]:
    """Identity-balanced batch indices: P classes, K samples per modality each."""
    keep, vis_pools, ir_pools = _class_pools(batch)
    if keep.size == 0:
        raise ConfigError("training data has no class with both modalities")
    p = min(ids_per_batch, keep.size)
    num_batches = max(1, batch.num_items // (ids_per_batch * samples_per_id * 2))
    batches = []
    for _ in range(num_batches):
        chosen = rng.choice(keep.size, size=p, replace=False)
        parts = []
        for ci in chosen:
            for pool in (vis_pools[ci], ir_pools[ci]):
                parts.append(rng.choice(pool, size=samples_per_id,
                                        replace=pool.size < samples_per_id))
        batches.append(np.concatenate(parts))
    return batches


def remap_labels(class_ids: np.ndarray) -> tuple[np.ndarray, dict[int, int]]:
    uniq = np.unique(class_ids)
    mapping = {int(c): i for i, c in enumerate(uniq)}
    return np.array([mapping[int(c)] for c in class_ids], dtype=np.int64), mapping


def train_step(state: TrainState, x: np.ndarray, modalities: np.ndarray,
               labels: np.ndarray, settings: TrainSettings, lr: float
               ) -> tuple[LossBreakdown, float]:
    """One forward/solve/backward/update step; returns the loss breakdown and
    the learned-transform penalty (zero outside ``learned-a`` mode)."""
    encoder = state.encoder
    cache = forward_pass(encoder, x, modalities)
    vm = cache.vis_mask
    emb = cache.embeddings
    vis, ir = emb[vm], emb[~vm]
    vl, il = labels[vm], labels[~vm]
    loss_p = settings.loss

    a_star = None
    w_star = None
    if settings.mode == "sas":
        means = ModalityMeans(vis.mean(axis=0), ir.mean(axis=0))
        a_star = solve_sas(means, SasParams(settings.alpha)).entries
    elif settings.mode == "aal":
        means = ModalityMeans(vis.mean(axis=0), ir.mean(axis=0))
        sol = solve_aal(means, AalParams(settings.alpha, settings.aal_max_iters,
                                         settings.aal_tol))
        a_star = sol.a_star.entries
        w_star = sol.w_star.w
    state.last_direct = {}
    if a_star is not None:
        state.last_direct["align.A"] = a_star
    if w_star is not None:
        state.last_direct["align.w"] = w_star

    l_id, d_logits = identity_parts(cache.logits, labels)
    l_hc, d_vis, d_ir = hc_triplet_parts(vis, ir, vl, il, loss_p.triplet_margin)
    bw = loss_p.mmd_bandwidths or median_heuristic_bandwidths(vis, ir)
    l_mmd, mv, mi = mmd_parts(vis, ir, bw)
    d_vis += mv
    d_ir += mi
    l_intra = 0.0
    l_ccl = 0.0
    if a_star is not None:
        l_intra, _, _ = intra_parts(a_star, vis, ir, vl, il, loss_p.beta)
        l_ccl, cv, ci = ccl_parts(a_star, vis, ir, vl, il,
                                  loss_p.beta, loss_p.gamma, loss_p.rho)
        d_vis += loss_p.lam * cv
        d_ir += loss_p.lam * ci

    l_align = 0.0
    grads_extra = {}
    if settings.mode == "learned-a":
        a = encoder.params["align.A"]
        xb, yb = vis.mean(axis=0), ir.mean(axis=0)
        r = a @ xb - yb
        l_align = float(r @ r + settings.alpha * np.sum(a * a))
        grads_extra["align.A"] = 2.0 * np.outer(r, xb) + 2.0 * settings.alpha * a
        d_vis += (2.0 / vis.shape[0]) * (a.T @ r)
        d_ir += (-2.0 / ir.shape[0]) * r

    l_total = l_id + l_hc + l_mmd + loss_p.lam * l_ccl
    if not np.isfinite(l_total + l_align):
        raise NonFiniteLoss(f"non-finite loss at batch {state.global_batch}",
                            state.global_batch)

    d_emb = np.zeros_like(emb)
    d_emb[vm] = d_vis
    d_emb[~vm] = d_ir
    grads = backward_pass(encoder, cache, d_emb, d_logits)
    grads.update(grads_extra)
    sgd_momentum_step(encoder.params, state.velocity, grads, lr,
                      settings.schedule.momentum)
    state.global_batch += 1
    return LossBreakdown(l_id=l_id, l_hc_tri=l_hc, l_mmd=l_mmd, l_intra=l_intra,
                         l_ccl=l_ccl, l_total=l_total), l_align


def embed_batch(encoder: Encoder, batch: FeatureBatch) -> FeatureBatch:
    cache = forward_pass(encoder, batch.features, batch.modalities)
    return FeatureBatch(cache.embeddings, batch.modalities, batch.class_ids)


def evaluate_state(state: TrainState, gallery: FeatureBatch, query: FeatureBatch,
                   k: int) -> RetrievalResult:
    return evaluate(embed_batch(state.encoder, query),
                    embed_batch(state.encoder, gallery), transform=None, k=k)


def train_epoch(state: TrainState, train: FeatureBatch, labels: np.ndarray,
                settings: TrainSettings) -> tuple[LossBreakdown, float]:
    """Run one epoch; returns the mean loss breakdown and mean penalty."""
    batches = draw_batches(train, state.rng, settings.ids_per_batch,
                           settings.samples_per_id)
    sums = np.zeros(6)
    align_sum = 0.0
    for bi, idx in enumerate(batches):
        frac = (bi + 1) / len(batches)
        lr = lr_at(settings.schedule, state.epoch, frac)
        bd, l_align = train_step(state, train.features[idx], train.modalities[idx],
                                 labels[idx], settings, lr)
        sums += (bd.l_id, bd.l_hc_tri, bd.l_mmd, bd.l_intra, bd.l_ccl, bd.l_total)
        align_sum += l_align
    nb = len(batches)
    mean = sums / nb
    return (LossBreakdown(l_id=mean[0], l_hc_tri=mean[1], l_mmd=mean[2],
                          l_intra=mean[3], l_ccl=mean[4], l_total=mean[5]),
            align_sum / nb)


@dataclass
class TrainResult:
    state: TrainState
    final_metrics: RetrievalResult
    history: list[dict]


def run_training(train: FeatureBatch, gallery: FeatureBatch, query: FeatureBatch,
                 settings: TrainSettings, seed: int,
                 state: TrainState | None = None) -> TrainResult:
    """Full training run (or continuation of ``state``) with per-epoch metrics."""
    labels, _ = remap_labels(train.class_ids)
    if state is None:
        state = init_state(train, settings, seed)
    while state.epoch < settings.epochs:
        breakdown, l_align = train_epoch(state, train, labels, settings)
        metrics = evaluate_state(state, gallery, query, settings.eval_k)
        row = {
            "epoch": state.epoch,
            "lr": lr_at(settings.schedule, state.epoch, 1.0),
            "l_id": breakdown.l_id, "l_hc_tri": breakdown.l_hc_tri,
            "l_mmd": breakdown.l_mmd, "l_intra": breakdown.l_intra,
            "l_ccl": breakdown.l_ccl, "l_align": l_align,
            "l_total": breakdown.l_total,
            "rank1": metrics.rank(1), "rank5": metrics.rank(5),
            "rank10": metrics.rank(10), "rank20": metrics.rank(20),
            "map": metrics.map,
        }
        state.history.append(row)
        logger.info("epoch %d mode=%s total=%.4f map=%.4f",
                    state.epoch, settings.mode, breakdown.l_total, metrics.map)
        state.epoch += 1
    final_metrics = evaluate_state(state, gallery, query, settings.eval_k)
    return TrainResult(state=state, final_metrics=final_metrics,
                       history=list(state.history))


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            cells = []
            for col in HISTORY_COLUMNS:
                v = row[col]
                cells.append(str(v) if isinstance(v, int) else repr(float(v)))
            fh.write(",".join(cells) + "\n")


def save_checkpoint(path, state: TrainState, config_digest: str = "") -> None:
    """Versioned dump of weights, momentum buffers, rng state, and history."""
    arrays = {}
    for k, v in state.encoder.params.items():
        arrays[f"param.{k}"] = v
    for k, v in state.velocity.items():
        arrays[f"vel.{k}"] = v
    meta = {
        "version": CHECKPOINT_VERSION,
        "epoch": state.epoch,
        "mode": state.mode,
        "global_batch": state.global_batch,
        "rng_state": state.rng.bit_generator.state,
        "encoder": {
            "input_dim": state.encoder.input_dim,
            "hidden_dim": state.encoder.hidden_dim,
            "embed_dim": state.encoder.embed_dim,
            "num_classes": state.encoder.num_classes,
            "normalize": state.encoder.normalize,
        },
        "history": state.history,
        "config_digest": config_digest,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[TrainState, str]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta['version']}")
        params = {k[len("param."):]: data[k].copy() for k in data.files
                  if k.startswith("param.")}
        velocity = {k[len("vel."):]: data[k].copy() for k in data.files
                    if k.startswith("vel.")}
    enc_meta = meta["encoder"]
    encoder = Encoder(params=params, input_dim=enc_meta["input_dim"],
                      hidden_dim=enc_meta["hidden_dim"],
                      embed_dim=enc_meta["embed_dim"],
                      num_classes=enc_meta["num_classes"],
                      normalize=enc_meta["normalize"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    state = TrainState(encoder=encoder, velocity=velocity, epoch=meta["epoch"],
                       rng=rng, history=list(meta["history"]), mode=meta["mode"],
                       global_batch=meta["global_batch"])
    return state, meta["config_digest"]
