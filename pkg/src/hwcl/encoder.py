"""Toy two-tower encoder trained by manual backprop through the contrastive losses.

Each tower is ``x -> W2 tanh(W1 x + b1) + b2`` followed by L2 normalization.
The reward model used for hardness weighting is the policy itself: its
parameters are copied into ``reward_snapshot`` after every optimizer step,
so at the start of a step ``r_theta = alpha * sg(s)`` under the current
policy.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .device_sim import cross_device_backward, cross_device_loss, partition_batch
from .embedding import EmbeddingBatch, cosine_matrix, normalize_rows
from .errors import NonFiniteGradient, ValidationError
from .losses import LossConfig, LossResult, RewardSpec

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hwcl-checkpoint"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass(frozen=True)
class TowerParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"tower parameter {name} has non-finite entries")
            object.__setattr__(self, name, arr)
        d_hidden, _ = self.W1.shape
        d_emb, d_hidden2 = self.W2.shape
        if self.b1.shape != (d_hidden,) or self.b2.shape != (d_emb,) or d_hidden2 != d_hidden:
            raise ValidationError("inconsistent tower parameter shapes")
        if d_emb < 2:
            raise ValidationError(f"d_emb must be >= 2, got {d_emb}")

    @classmethod
    def init(cls, d_in: int, d_hidden: int, d_emb: int, rng: np.random.Generator) -> "TowerParams":
        # scaled Gaussian (Xavier-style) weights, zero biases
        return cls(
            W1=rng.standard_normal((d_hidden, d_in)) / np.sqrt(d_in),
            b1=np.zeros(d_hidden),
            W2=rng.standard_normal((d_emb, d_hidden)) / np.sqrt(d_hidden),
            b2=np.zeros(d_emb),
        )

    @property
    def d_in(self) -> int:
        return self.W1.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in PARAM_NAMES])

    def unflat(self, vec: np.ndarray) -> "TowerParams":
        out, pos = {}, 0
        for name in PARAM_NAMES:
            shape = getattr(self, name).shape
            size = int(np.prod(shape))
            out[name] = np.asarray(vec[pos : pos + size], dtype=np.float64).reshape(shape)
            pos += size
        return TowerParams(**out)

    def copy(self) -> "TowerParams":
        return TowerParams(**{n: a.copy() for n, a in self.arrays().items()})

    def step(self, grads: dict[str, np.ndarray], lr: float) -> "TowerParams":
        with np.errstate(over="ignore", invalid="ignore"):
            new = {n: getattr(self, n) - lr * grads[n] for n in PARAM_NAMES}
        if not all(np.all(np.isfinite(a)) for a in new.values()):
            raise NonFiniteGradient("parameter update overflowed")
        return TowerParams(**new)

    def equals(self, other: "TowerParams") -> bool:
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in PARAM_NAMES)


def tower_forward(tower: TowerParams, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(hidden, raw_output)``; the raw output is not yet normalized."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != tower.d_in:
        raise ValidationError(f"inputs must be n x {tower.d_in}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("inputs must be finite")
    h = np.tanh(x @ tower.W1.T + tower.b1)
    return h, h @ tower.W2.T + tower.b2


def tower_backward(tower: TowerParams, inputs, hidden, d_out) -> dict[str, np.ndarray]:
    x = np.asarray(inputs, dtype=np.float64)
    d_pre = (d_out @ tower.W2) * (1.0 - hidden**2)
    return {
        "W1": d_pre.T @ x,
        "b1": d_pre.sum(axis=0),
        "W2": d_out.T @ hidden,
        "b2": d_out.sum(axis=0),
    }


def encode(tower: TowerParams, inputs) -> np.ndarray:
    """Embed ``inputs`` (n x d_in) as unit-norm rows."""
    _, y = tower_forward(tower, inputs)
    return normalize_rows(y, "encoded output")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    steps: int = 500
    batch_size: int = 64
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    shards: int = 1
    d_hidden: int = 32
    d_emb: int = 16
    shared_towers: bool = False
    freeze_query: bool = False
    freeze_target: bool = False

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2")
        if not 1 <= self.shards <= self.batch_size:
            raise ValidationError("shards must be in [1, batch_size]")
        if self.d_emb < 2 or self.d_hidden < 1:
            raise ValidationError("d_emb must be >= 2 and d_hidden >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        loss = LossConfig.from_dict(d.pop("loss", {}))
        known = set(cls.__dataclass_fields__) - {"loss"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(loss=loss, **d)

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in self.__dataclass_fields__ if name != "loss"}
        out["loss"] = self.loss.to_dict()
        return out

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class PolicyState:
    """Policy towers plus the reward model copy.

    With ``shared`` set, ``target_tower`` is the same object as
    ``query_tower`` and both sides' gradients are summed into it.
    """

    query_tower: TowerParams
    target_tower: TowerParams
    step_count: int = 0
    shared: bool = False
    reward_snapshot: tuple[TowerParams, TowerParams] | None = None

    def __post_init__(self):
        if self.shared and self.target_tower is not self.query_tower:
            object.__setattr__(self, "target_tower", self.query_tower)
        if self.reward_snapshot is None:
            object.__setattr__(self, "reward_snapshot", self._snapshot())

    @classmethod
    def init(cls, d_in: int, config: TrainConfig) -> "PolicyState":
        rng = np.random.default_rng(config.seed)
        q = TowerParams.init(d_in, config.d_hidden, config.d_emb, rng)
        t = q if config.shared_towers else TowerParams.init(d_in, config.d_hidden, config.d_emb, rng)
        return cls(q, t, shared=config.shared_towers)

    def _snapshot(self) -> tuple[TowerParams, TowerParams]:
        q = self.query_tower.copy()
        return (q, q if self.shared else self.target_tower.copy())

    def synced(self) -> "PolicyState":
        return replace(self, reward_snapshot=self._snapshot())

    def is_synced(self) -> bool:
        rq, rt = self.reward_snapshot
        return rq.equals(self.query_tower) and rt.equals(self.target_tower)

    def flat(self) -> np.ndarray:
        if self.shared:
            return self.query_tower.flat()
        return np.concatenate([self.query_tower.flat(), self.target_tower.flat()])

    def with_flat(self, vec: np.ndarray) -> "PolicyState":
        nq = self.query_tower.flat().size
        q = self.query_tower.unflat(vec[:nq])
        t = q if self.shared else self.target_tower.unflat(vec[nq:])
        return PolicyState(q, t, self.step_count, self.shared)


def reward_similarities(state: PolicyState, query_features, target_features) -> np.ndarray:
    """Cosine similarities under the reward model (the synced snapshot)."""
    rq, rt = state.reward_snapshot
    return cosine_matrix(EmbeddingBatch(encode(rq, query_features), encode(rt, target_features))).values


def batch_loss(
    state: PolicyState,
    query_features,
    target_features,
    config: TrainConfig,
    reward: RewardSpec | None = None,
) -> LossResult:
    """Forward pass only: the loss the next step would optimize."""
    _, yq = tower_forward(state.query_tower, query_features)
    _, yt = tower_forward(state.target_tower, target_features)
    shards = partition_batch(EmbeddingBatch(yq, yt), config.shards)
    total, _ = cross_device_loss(shards, config.loss, reward)
    return total


def compute_gradients(
    state: PolicyState,
    query_features,
    target_features,
    config: TrainConfig,
    reward: RewardSpec | None = None,
) -> tuple[dict[str, dict[str, np.ndarray]], LossResult]:
    """Parameter gradients of the mean loss, via the device-sharded loss path.

    Returns ``({"query": grads, "target": grads}, loss_result)``; with shared
    towers both entries hold the same summed gradient.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        hq, yq = tower_forward(state.query_tower, query_features)
        ht, yt = tower_forward(state.target_tower, target_features)
        diverged = not all(np.all(np.isfinite(np.linalg.norm(y, axis=1))) for y in (yq, yt))
    if diverged:
        raise NonFiniteGradient(f"embeddings overflowed at step {state.step_count}")
    shards = partition_batch(EmbeddingBatch(yq, yt), config.shards)
    total, _ = cross_device_loss(shards, config.loss, reward)
    d_q_parts, d_t = cross_device_backward(shards, total)
    d_q = np.concatenate(d_q_parts, axis=0)
    gq = tower_backward(state.query_tower, query_features, hq, d_q)
    gt = tower_backward(state.target_tower, target_features, ht, d_t)
    if state.shared:
        summed = {n: gq[n] + gt[n] for n in PARAM_NAMES}
        gq = gt = summed
    for side, grads in (("query", gq), ("target", gt)):
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in {side} tower {name} at step {state.step_count}")
    if not np.isfinite(total.loss):
        raise NonFiniteGradient(f"non-finite loss at step {state.step_count}")
    return {"query": gq, "target": gt}, total


def backprop_step(
    state: PolicyState,
    query_features,
    target_features,
    config: TrainConfig,
    reward: RewardSpec | None = None,
) -> tuple[PolicyState, LossResult]:
    """One plain-SGD step, then sync the reward model to the updated policy."""
    grads, result = compute_gradients(state, query_features, target_features, config, reward)
    lr = config.learning_rate
    q = state.query_tower if config.freeze_query else state.query_tower.step(grads["query"], lr)
    if state.shared:
        t = q
    else:
        t = state.target_tower if config.freeze_target else state.target_tower.step(grads["target"], lr)
    new_state = PolicyState(q, t, state.step_count + 1, state.shared).synced()
    return new_state, result


def batch_schedule(n_pairs: int, batch_size: int, steps: int, seed: int) -> Iterator[np.ndarray]:
    """Index batches for ``steps`` steps: shuffled epochs, drop-last, seeded.

    Independent of the loss variant, so paired runs see identical batches.
    """
    if batch_size > n_pairs:
        raise ValidationError(f"batch_size {batch_size} exceeds dataset size {n_pairs}")
    rng = np.random.default_rng([seed, 1])
    per_epoch = n_pairs // batch_size
    done = 0
    while done < steps:
        perm = rng.permutation(n_pairs)
        for b in range(per_epoch):
            if done >= steps:
                return
            yield perm[b * batch_size : (b + 1) * batch_size]
            done += 1


def train(state: PolicyState, dataset, config: TrainConfig, reward: RewardSpec | None = None):
    """Run ``config.steps`` SGD steps over ``dataset`` (anything with ``queries``/``targets``).

    Returns ``(final_state, loss_trace)``; the trace holds the loss of each
    step's batch before its update.
    """
    trace: list[float] = []
    n = dataset.queries.shape[0]
    for idx in batch_schedule(n, config.batch_size, config.steps, config.seed):
        state, result = backprop_step(state, dataset.queries[idx], dataset.targets[idx], config, reward)
        trace.append(result.loss)
        if state.step_count % 100 == 0:
            logger.debug("step %d loss %.6f", state.step_count, result.loss)
    return state, trace


def save_checkpoint(path, state: PolicyState, config: TrainConfig) -> None:
    """Write parameters as JSON (floats round-trip exactly through repr)."""
    towers = {"query": {n: a.tolist() for n, a in state.query_tower.arrays().items()}}
    if not state.shared:
        towers["target"] = {n: a.tolist() for n, a in state.target_tower.arrays().items()}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step_count": state.step_count,
        "shared": state.shared,
        "config_hash": config.fingerprint(),
        "config": config.to_dict(),
        "towers": towers,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path) -> tuple[PolicyState, TrainConfig]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    config = TrainConfig.from_dict(doc["config"])
    if config.fingerprint() != doc["config_hash"]:
        raise ValidationError(f"{path}: config hash mismatch")
    q = TowerParams(**doc["towers"]["query"])
    t = q if doc["shared"] else TowerParams(**doc["towers"]["target"])
    return PolicyState(q, t, doc["step_count"], doc["shared"]), config
