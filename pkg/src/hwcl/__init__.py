"""Hardness-weighted contrastive learning for embedding models, at desk scale."""

from .analysis import (
    HistogramSpec,
    SimilarityGapReport,
    classify_negatives,
    gap_report,
    histogram,
    precision_at_1,
    recall_at_k,
)
from .device_sim import DeviceShard, GatheredView, cross_device_backward, cross_device_loss, gather_targets, partition_batch
from .embedding import EmbeddingBatch, SimilarityMatrix, cosine_backward, cosine_matrix, l2_normalize
from .encoder import PolicyState, TowerParams, TrainConfig, backprop_step, encode, train
from .losses import (
    LossConfig,
    LossResult,
    RewardSpec,
    bt_one_to_n,
    bt_pairwise,
    hardness_weighted,
    infonce,
    loss_gradient_decomposition,
)

__version__ = "0.1.0"
