"""Seeded synthetic pair data with controllable hardness.

Cluster centers are standard Gaussian. Every pair gets an anchor
``center + sigma_within * noise`` and its query and target are the anchor
plus independent ``sigma_pair`` noise. Pairs sharing a cluster are
structural hard negatives for each other; pairs from other clusters are
easy negatives.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import InvalidSpec

DATA_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SyntheticSpec:
    n_clusters: int = 8
    pairs_per_cluster: int = 16
    d_in: int = 12
    intra_cluster_noise: float = 1.0
    query_target_noise: float = 0.3
    seed: int = 0
    heldout_pairs_per_cluster: int = 8

    def __post_init__(self):
        if self.n_clusters < 2:
            raise InvalidSpec("n_clusters must be >= 2")
        if self.pairs_per_cluster < 2:
            raise InvalidSpec("pairs_per_cluster must be >= 2")
        if self.d_in < 1:
            raise InvalidSpec("d_in must be >= 1")
        if self.intra_cluster_noise < 0 or self.query_target_noise < 0:
            raise InvalidSpec("noise levels must be non-negative")
        if self.heldout_pairs_per_cluster < 0:
            raise InvalidSpec("heldout_pairs_per_cluster must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidSpec(f"unknown spec keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PairDataset:
    queries: np.ndarray
    targets: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.queries.shape[0]


def _pairs(centers, per_cluster, spec, rng) -> PairDataset:
    labels = np.repeat(np.arange(spec.n_clusters), per_cluster)
    anchors = centers[labels] + spec.intra_cluster_noise * rng.standard_normal((labels.size, spec.d_in))
    queries = anchors + spec.query_target_noise * rng.standard_normal(anchors.shape)
    targets = anchors + spec.query_target_noise * rng.standard_normal(anchors.shape)
    return PairDataset(queries, targets, labels)


def generate_dataset(spec: SyntheticSpec) -> PairDataset:
    """Training pairs, ``n_clusters * pairs_per_cluster`` of them, cluster-major order."""
    return generate_splits(spec)[0]


def generate_splits(spec: SyntheticSpec) -> tuple[PairDataset, PairDataset]:
    """``(train, heldout)`` drawn from the same cluster centers with independent noise."""
    centers_ss, train_ss, heldout_ss = np.random.SeedSequence(spec.seed).spawn(3)
    centers = np.random.default_rng(centers_ss).standard_normal((spec.n_clusters, spec.d_in))
    train = _pairs(centers, spec.pairs_per_cluster, spec, np.random.default_rng(train_ss))
    heldout = _pairs(centers, spec.heldout_pairs_per_cluster, spec, np.random.default_rng(heldout_ss))
    return train, heldout


def save_dataset(path, train: PairDataset, heldout: PairDataset, spec: SyntheticSpec) -> None:
    np.savez(
        path,
        version=DATA_FORMAT_VERSION,
        spec=json.dumps(spec.to_dict(), sort_keys=True),
        train_queries=train.queries,
        train_targets=train.targets,
        train_labels=train.labels,
        heldout_queries=heldout.queries,
        heldout_targets=heldout.targets,
        heldout_labels=heldout.labels,
    )


def load_dataset(path) -> tuple[PairDataset, PairDataset, SyntheticSpec]:
    path = Path(path)
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise InvalidSpec(f"{path}: cannot read dataset ({exc})") from exc
    with z:
        if int(z["version"]) != DATA_FORMAT_VERSION:
            raise InvalidSpec(f"{path}: unsupported dataset version {int(z['version'])}")
        spec = SyntheticSpec.from_dict(json.loads(str(z["spec"])))
        train = PairDataset(z["train_queries"], z["train_targets"], z["train_labels"])
        heldout = PairDataset(z["heldout_queries"], z["heldout_targets"], z["heldout_labels"])
    return train, heldout, spec
