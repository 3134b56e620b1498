"""SimEx: predict dataset and class similarity from autoencoder reconstruction error.

A fleet holds one autoencoder per reference set. Pushing an unknown set X
through the member trained on Y_k gives Delta(X | Y_k), the mean per-sample
reconstruction difference; sorting references by Delta ranks them from most to
least similar.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .analytics import PairingResult, RankList, greedy_pairing, rank_of, spearman_rho
from .data import Dataset, SplitSpec, balance, load_idx, split, write_idx
from .engine import (DeltaMatrix, DeltaResult, Fleet, SimilarityOrdering, delta_matrix, evaluate_delta,
                     normalize_deltas, order_by_similarity, pretrain_fleet, train_with_ordering_convergence)
from .losses import LossKind, loss_and_grad, mse, ssim_index
from .models import (AutoencoderModel, ClassifierModel, TrainConfig, bottleneck_embed, build_autoencoder,
                     build_classifier, reconstruct, train)

__all__ = [
    "AutoencoderModel", "ClassifierModel", "Dataset", "DeltaMatrix", "DeltaResult", "Fleet", "LossKind",
    "PairingResult", "RankList", "SimilarityOrdering", "SplitSpec", "TrainConfig", "balance",
    "bottleneck_embed", "build_autoencoder", "build_classifier", "delta_matrix", "evaluate_delta",
    "greedy_pairing", "load_idx", "loss_and_grad", "mse", "normalize_deltas", "order_by_similarity",
    "pretrain_fleet", "rank_of", "reconstruct", "spearman_rho", "split", "ssim_index", "train",
    "train_with_ordering_convergence", "write_idx",
]
