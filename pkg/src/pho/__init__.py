"""Hierarchical parameter optimization for cross-modality feature alignment.

The library splits a model's parameters into a directly optimized set (an
alignment transform and simplex feature weights, solved in closed form from
batch statistics) and a gradient-trained remainder, and provides the
surrounding pieces: alignment solvers, consistency losses, a deterministic
two-stream trainer, synthetic cross-modality data, and retrieval metrics.
"""

__version__ = "0.1.0"

from .aal import (AalParams, AalSolution, alignment_errors, p2_objective,
                  solve_aal, solve_p21, solve_p22)
from .core import (ClassMeans, FeatureBatch, Modality, ModalityMeans,
                   SimplexWeights, TransformMatrix, batch_means, class_means)
from .data import (ModalityMap, SynthSpec, TrackletSpec, generate,
                   generate_tracklets, load_features, write_features)
from .evaluation import RetrievalResult, evaluate, rank_gallery
from .losses import (LossBreakdown, LossParams, ccl_loss, gem_pool,
                     hc_triplet_loss, identity_loss, intra_loss, mmd_loss,
                     total_loss)
from .network import Encoder, LrSchedule, forward, lr_at, sgd_momentum_step
from .sas import SasParams, p1_objective, solve_sas
from .training import (TrainSettings, TrainState, partition_parameters,
                       run_training, train_epoch, train_step)

__all__ = [
    "AalParams", "AalSolution", "ClassMeans", "Encoder", "FeatureBatch",
    "LossBreakdown", "LossParams", "LrSchedule", "Modality", "ModalityMap",
    "ModalityMeans", "RetrievalResult", "SasParams", "SimplexWeights",
    "SynthSpec", "TrackletSpec", "TrainSettings", "TrainState",
    "TransformMatrix", "alignment_errors", "batch_means", "ccl_loss",
    "class_means", "evaluate", "forward", "gem_pool", "generate",
    "generate_tracklets", "hc_triplet_loss", "identity_loss", "intra_loss",
    "load_features", "lr_at", "mmd_loss", "p1_objective", "p2_objective",
    "partition_parameters", "rank_gallery", "run_training", "sgd_momentum_step",
    "solve_aal", "solve_p21", "solve_p22", "solve_sas", "total_loss",
    "train_epoch", "train_step", "write_features",
]
