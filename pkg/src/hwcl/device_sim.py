"""In-process simulation of cross-device negative gathering.

Each logical device holds a shard of (query, target) pairs. Targets are
all-gathered in ascending device-id order, every device scores its own
queries against the full gathered pool, and the per-query losses are
reduced in device-id then row order. Because the loss kernel is row-local,
the sharded result equals the loss on the concatenated batch.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingBatch, SimilarityMatrix, cosine_backward, cosine_matrix
from .errors import DimensionMismatch, DuplicateDeviceId, ValidationError
from .losses import (
    LossConfig,
    LossResult,
    RewardSpec,
    evaluate_loss,
    gradient_from_probabilities,
)


@dataclass(frozen=True)
class DeviceShard:
    device_id: int
    local_batch: EmbeddingBatch

    @property
    def size(self) -> int:
        return self.local_batch.n_queries


@dataclass(frozen=True)
class GatheredView:
    """What one device sees after the all-gather."""

    device_id: int
    local_queries: np.ndarray
    global_targets: np.ndarray
    positive_offset: np.ndarray
    row_origin: np.ndarray
    col_origin: np.ndarray
    row_start: int

    @property
    def n_negatives(self) -> int:
        return self.global_targets.shape[0] - 1

    def batch(self) -> EmbeddingBatch:
        return EmbeddingBatch(self.local_queries, self.global_targets, self.positive_offset)

    def similarity(self) -> SimilarityMatrix:
        return cosine_matrix(self.batch(), row_origin=self.row_origin, col_origin=self.col_origin)


def _ordered(shards) -> list[DeviceShard]:
    shards = list(shards)
    if not shards:
        raise ValidationError("need at least one shard")
    ids = [s.device_id for s in shards]
    if len(set(ids)) != len(ids):
        raise DuplicateDeviceId(f"device ids must be distinct, got {ids}")
    if sorted(ids) != list(range(len(ids))):
        raise ValidationError(f"device ids must be contiguous from 0, got {sorted(ids)}")
    dims = {s.local_batch.dim for s in shards}
    if len(dims) != 1:
        raise DimensionMismatch(f"shards disagree on embedding dim: {sorted(dims)}")
    for s in shards:
        if s.local_batch.n_targets != s.local_batch.n_queries:
            raise ValidationError(f"device {s.device_id}: shards hold paired queries and targets")
    return sorted(shards, key=lambda s: s.device_id)


def gather_targets(shards) -> list[GatheredView]:
    """All-gather targets; returns one view per device in device-id order."""
    ordered = _ordered(shards)
    global_targets = np.concatenate([s.local_batch.targets for s in ordered], axis=0)
    col_origin = np.concatenate(
        [np.column_stack([np.full(s.size, s.device_id), np.arange(s.size)]) for s in ordered]
    ).astype(np.int64)
    views = []
    offset = 0
    for s in ordered:
        n = s.size
        views.append(
            GatheredView(
                device_id=s.device_id,
                local_queries=s.local_batch.queries,
                global_targets=global_targets,
                positive_offset=offset + s.local_batch.positive_index,
                row_origin=col_origin[offset : offset + n],
                col_origin=col_origin,
                row_start=offset,
            )
        )
        offset += n
    return views


def partition_batch(batch: EmbeddingBatch, k: int) -> list[DeviceShard]:
    """Split an in-batch-paired EmbeddingBatch into ``k`` contiguous shards.

    Shard sizes follow ``np.array_split``, so they differ by at most one.
    """
    n = batch.n_queries
    if not 1 <= k <= n:
        raise ValidationError(f"cannot split {n} pairs over {k} devices")
    if batch.n_targets != n or not np.array_equal(batch.positive_index, np.arange(n)):
        raise ValidationError("partition_batch needs the in-batch pairing (query i <-> target i)")
    shards = []
    for device_id, idx in enumerate(np.array_split(np.arange(n), k)):
        sub = EmbeddingBatch(batch.queries[idx], batch.targets[idx])
        shards.append(DeviceShard(device_id, sub))
    return shards


def _device_loss(view: GatheredView, config: LossConfig, reward: RewardSpec):
    sim = view.similarity()
    n = view.local_queries.shape[0]
    res = evaluate_loss(sim, view.positive_offset, config, reward.rows(view.row_start, view.row_start + n))
    return sim, res


def cross_device_loss(
    shards,
    config: LossConfig,
    reward: RewardSpec | None = None,
    max_workers: int | None = None,
) -> tuple[LossResult, list[LossResult]]:
    """Loss over local queries x gathered targets on every device.

    ``per_device[k]`` is device k's own loss (mean over its local rows).
    ``total`` stacks every row in device-id order and takes the mean over
    all queries; its ``grad_wrt_sim`` is the gradient of that global mean
    with respect to the stacked (sum N_local) x (sum N_local) grid. An
    external reward is given in that same global layout.
    """
    reward = reward or RewardSpec()
    views = gather_targets(shards)
    if max_workers and max_workers > 1 and len(views) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outs = list(pool.map(lambda v: _device_loss(v, config, reward), views))
    else:
        outs = [_device_loss(v, config, reward) for v in views]
    per_device = [res for _, res in outs]
    total = _reduce(per_device)
    return total, per_device


def _reduce(per_device: list[LossResult]) -> LossResult:
    stack = lambda name: np.concatenate([getattr(r, name) for r in per_device], axis=0)  # noqa: E731
    per_row = stack("per_row_loss")
    probs = stack("probabilities")
    positives = stack("positives")
    tau = per_device[0].tau
    return LossResult(
        loss=float(per_row.mean()),
        per_row_loss=per_row,
        normalizers=stack("normalizers"),
        grad_wrt_sim=gradient_from_probabilities(probs, positives, tau, per_row.shape[0]),
        reward_matrix=stack("reward_matrix"),
        positives=positives,
        tau=tau,
        variant=per_device[0].variant,
        logits=stack("logits"),
        probabilities=probs,
    )


def cross_device_backward(shards, total: LossResult) -> tuple[list[np.ndarray], np.ndarray]:
    """Chain the global similarity gradient back to every device's embeddings.

    Returns ``(d_queries per device, d_targets)`` where ``d_targets`` covers
    the gathered target pool in canonical order and is the sum of every
    device's contribution (the all-reduce of the gather's backward).
    """
    views = gather_targets(shards)
    d_queries = []
    d_targets = np.zeros_like(views[0].global_targets)
    for view in views:
        n = view.local_queries.shape[0]
        g = total.grad_wrt_sim[view.row_start : view.row_start + n]
        dq, dt = cosine_backward(view.batch(), g)
        d_queries.append(dq)
        d_targets += dt
    return d_queries, d_targets
