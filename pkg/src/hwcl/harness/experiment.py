"""Paired training runs: one model per loss variant from identical init and data order."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, replace

import numpy as np

from ..analysis import HistogramSpec, SimilarityGapReport, classify_negatives, gap_report, histogram, recall_at_k
from ..embedding import EmbeddingBatch, cosine_matrix
from ..encoder import PolicyState, TrainConfig, batch_schedule, encode, train
from ..errors import ValidationError
from ..losses import LossConfig
from .data import PairDataset, SyntheticSpec, generate_splits


@dataclass
class ExperimentResult:
    name: str
    fingerprint: str
    seed: int
    train_config: TrainConfig
    loss_trace: list[float]
    report: SimilarityGapReport
    precision_at_1: float
    recall_at_5: float
    histogram: HistogramSpec
    first_batch_fingerprint: str
    wall_clock_seconds: float

    def metrics(self) -> dict:
        """Everything except wall-clock time, so identical runs serialize identically."""
        return {
            "name": self.name,
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "train_config": self.train_config.to_dict(),
            "initial_loss": self.loss_trace[0] if self.loss_trace else None,
            "final_loss": self.loss_trace[-1] if self.loss_trace else None,
            "loss_trace": self.loss_trace,
            "gap_report": self.report.to_dict(),
            "precision_at_1": self.precision_at_1,
            "recall_at_5": self.recall_at_5,
            "first_batch_fingerprint": self.first_batch_fingerprint,
        }


def run_fingerprint(spec: SyntheticSpec, config: TrainConfig) -> str:
    blob = json.dumps({"seed": config.seed, "train": config.to_dict(), "data": spec.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def first_batch_fingerprint(dataset: PairDataset, config: TrainConfig) -> str:
    idx = next(batch_schedule(len(dataset), config.batch_size, max(config.steps, 1), config.seed))
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.queries[idx]).tobytes())
    h.update(np.ascontiguousarray(dataset.targets[idx]).tobytes())
    return h.hexdigest()[:16]


def evaluate(state: PolicyState, heldout: PairDataset, k: int = 5):
    """Similarity grid of the held-out pairs under the trained towers, with its report."""
    sim = cosine_matrix(EmbeddingBatch(encode(state.query_tower, heldout.queries), encode(state.target_tower, heldout.targets)))
    positives = np.arange(len(heldout))
    negatives = classify_negatives(sim, positives, k)
    report = gap_report(sim, positives, k, negatives=negatives)
    hist = histogram(sim, positives, negatives)
    r5 = recall_at_k(sim, positives, min(5, sim.shape[1]))
    return sim, report, hist, r5


def train_and_evaluate(
    spec: SyntheticSpec,
    config: TrainConfig,
    splits: tuple[PairDataset, PairDataset] | None = None,
    name: str | None = None,
) -> tuple[PolicyState, ExperimentResult]:
    train_set, heldout = splits if splits is not None else generate_splits(spec)
    start = time.perf_counter()
    state = PolicyState.init(spec.d_in, config)
    state, trace = train(state, train_set, config)
    elapsed = time.perf_counter() - start
    _, report, hist, r5 = evaluate(state, heldout)
    return state, ExperimentResult(
        name=name or config.loss.label,
        fingerprint=run_fingerprint(spec, config),
        seed=config.seed,
        train_config=config,
        loss_trace=[float(x) for x in trace],
        report=report,
        precision_at_1=report.precision_at_1,
        recall_at_5=r5,
        histogram=hist,
        first_batch_fingerprint=first_batch_fingerprint(train_set, config),
        wall_clock_seconds=elapsed,
    )


def run_single(spec, config, splits=None, name=None) -> ExperimentResult:
    return train_and_evaluate(spec, config, splits, name)[1]


def run_experiment(spec: SyntheticSpec, train_config: TrainConfig, variants: list[LossConfig]) -> list[ExperimentResult]:
    """Train one model per loss variant, all from the same init and batch sequence."""
    splits = generate_splits(spec)
    return [run_single(spec, replace(train_config, loss=v), splits) for v in variants]


def run_configs(spec: SyntheticSpec, configs: list[tuple[str, TrainConfig]]) -> list[ExperimentResult]:
    """Like ``run_experiment`` but each run may differ in any TrainConfig field."""
    splits = generate_splits(spec)
    return [run_single(spec, cfg, splits, name=name) for name, cfg in configs]


def run_seeds(
    spec: SyntheticSpec,
    train_config: TrainConfig,
    variants: list[LossConfig],
    seeds: list[int],
) -> dict[int, list[ExperimentResult]]:
    """``run_experiment`` once per seed; data and init both take that seed."""
    return {
        seed: run_experiment(replace(spec, seed=seed), replace(train_config, seed=seed), variants) for seed in seeds
    }


def mean_by_name(runs: dict[int, list[ExperimentResult]], attr) -> dict[str, float]:
    """Average a per-result quantity over seeds, keyed by result name in input order."""
    get = attr if callable(attr) else (lambda r: getattr(r, attr))
    names = [r.name for r in next(iter(runs.values()))]
    return {name: float(np.mean([get(rs[i]) for rs in runs.values()])) for i, name in enumerate(names)}


SWEEPABLE = ("alpha", "tau", "shards", "batch_size")


def sweep_configs(base: TrainConfig, param: str, values: list[float]) -> list[tuple[str, TrainConfig]]:
    if param == "alpha":
        return [(f"alpha={v:g}", replace(base, loss=LossConfig(tau=base.loss.tau, alpha=float(v)))) for v in values]
    if param == "tau":
        return [(f"tau={v:g}", replace(base, loss=replace(base.loss, tau=float(v)))) for v in values]
    if param in ("shards", "batch_size"):
        return [(f"{param}={int(v)}", replace(base, **{param: int(v)})) for v in values]
    raise ValidationError(f"cannot sweep {param!r}; choose from {SWEEPABLE}")
