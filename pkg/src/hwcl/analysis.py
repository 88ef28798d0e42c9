"""Similarity-gap analysis and retrieval metrics.

Hard negatives of a query are its top-k non-positive similarities, easy
negatives its bottom-k. Gaps are reported as negative minus positive, so a
more negative gap means better separation. Every ranking breaks ties by
ascending column index.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .embedding import as_values, check_positives
from .errors import InvalidK, NoNegatives, OutOfRangeValue, ShapeMismatch, ValidationError

REPORT_SCHEMA_VERSION = 1
HISTOGRAM_SCHEMA_VERSION = 1
EDGE_SLACK = 1e-9
CLASSES = ("positive", "hard_negative", "easy_negative")


@dataclass(frozen=True)
class NegativeSets:
    """Column indices of one query's hard and easy negatives (hardest / easiest first)."""

    hard: np.ndarray
    easy: np.ndarray


def _prepare(sim, positives):
    s = as_values(sim)
    pos = check_positives(positives, s.shape[1])
    if pos.shape[0] != s.shape[0]:
        raise ShapeMismatch(f"{pos.shape[0]} positives for {s.shape[0]} rows")
    return s, pos


def classify_negatives(sim, positives, k: int = 5) -> list[NegativeSets]:
    s, pos = _prepare(sim, positives)
    m = s.shape[1]
    if m < 2:
        raise NoNegatives("need at least two candidates per query")
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    kk = min(k, m - 1)
    out = []
    for i, row in enumerate(s):
        cols = np.delete(np.arange(m), pos[i])
        vals = row[cols]
        # stable sorts keep equal values in ascending column order
        hard = cols[np.argsort(-vals, kind="stable")[:kk]]
        easy = cols[np.argsort(vals, kind="stable")[:kk]]
        out.append(NegativeSets(hard=hard, easy=easy))
    return out


def precision_at_1(sim, positives) -> float:
    """Fraction of queries whose top-ranked candidate is the positive."""
    s, pos = _prepare(sim, positives)
    # argmax returns the first (lowest-index) maximum
    return float(np.mean(s.argmax(axis=1) == pos))


def positive_ranks(sim, positives) -> np.ndarray:
    """0-based rank of each query's positive under the stable tie-break."""
    s, pos = _prepare(sim, positives)
    rows = np.arange(s.shape[0])
    sp = s[rows, pos][:, None]
    cols = np.arange(s.shape[1])[None, :]
    ahead = (s > sp) | ((s == sp) & (cols < pos[:, None]))
    return ahead.sum(axis=1)


def recall_at_k(sim, positives, k: int) -> float:
    s = as_values(sim)
    if not 1 <= k <= s.shape[1]:
        raise InvalidK(f"k must be in [1, {s.shape[1]}], got {k}")
    return float(np.mean(positive_ranks(s, positives) < k))


@dataclass(frozen=True)
class SimilarityGapReport:
    mean_positive: float
    mean_hard_negative: float
    mean_easy_negative: float
    hard_gap: float
    easy_gap: float
    precision_at_1: float
    n_queries: int
    k_hard: int
    k_easy: int

    def to_dict(self) -> dict:
        return {"schema_version": REPORT_SCHEMA_VERSION, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityGapReport":
        d = {k: v for k, v in d.items() if k != "schema_version"}
        return cls(**d)


def gap_report(sim, positives, k: int = 5, negatives: list[NegativeSets] | None = None) -> SimilarityGapReport:
    """Mean positive / hard / easy similarities over the given grid, plus Precision@1."""
    s, pos = _prepare(sim, positives)
    negatives = negatives if negatives is not None else classify_negatives(s, pos, k)
    rows = np.arange(s.shape[0])
    positive = s[rows, pos]
    hard = np.concatenate([s[i, n.hard] for i, n in enumerate(negatives)])
    easy = np.concatenate([s[i, n.easy] for i, n in enumerate(negatives)])
    mp, mh, me = float(positive.mean()), float(hard.mean()), float(easy.mean())
    return SimilarityGapReport(
        mean_positive=mp,
        mean_hard_negative=mh,
        mean_easy_negative=me,
        hard_gap=mh - mp,
        easy_gap=me - mp,
        precision_at_1=precision_at_1(s, pos),
        n_queries=int(s.shape[0]),
        k_hard=int(negatives[0].hard.size),
        k_easy=int(negatives[0].easy.size),
    )


@dataclass(frozen=True)
class HistogramSpec:
    bin_edges: np.ndarray
    counts: dict[str, np.ndarray]

    def to_dict(self) -> dict:
        bins = []
        for b in range(self.bin_edges.size - 1):
            bins.append(
                {
                    "edge_low": float(self.bin_edges[b]),
                    "edge_high": float(self.bin_edges[b + 1]),
                    "counts_by_class": {c: int(self.counts[c][b]) for c in CLASSES},
                }
            )
        return {"schema_version": HISTOGRAM_SCHEMA_VERSION, "bins": bins}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def default_bin_edges(n_bins: int = 40) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n_bins + 1)


def histogram(sim, positives, negatives: list[NegativeSets], bin_edges=None) -> HistogramSpec:
    """Per-class similarity counts over half-open bins (the last bin is closed)."""
    s, pos = _prepare(sim, positives)
    edges = default_bin_edges() if bin_edges is None else np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValidationError("bin edges must be a strictly increasing vector of length >= 2")
    if len(negatives) != s.shape[0]:
        raise ShapeMismatch("need one NegativeSets per query")
    rows = np.arange(s.shape[0])
    samples = {
        "positive": s[rows, pos],
        "hard_negative": np.concatenate([s[i, n.hard] for i, n in enumerate(negatives)]),
        "easy_negative": np.concatenate([s[i, n.easy] for i, n in enumerate(negatives)]),
    }
    counts = {}
    for name, vals in samples.items():
        # cosine rounding can land a hair past +-1
        vals = np.where(np.abs(vals - edges[0]) <= EDGE_SLACK, edges[0], vals)
        vals = np.where(np.abs(vals - edges[-1]) <= EDGE_SLACK, edges[-1], vals)
        if vals.size and (vals.min() < edges[0] or vals.max() > edges[-1]):
            raise OutOfRangeValue(f"{name} similarity outside [{edges[0]}, {edges[-1]}]")
        # np.histogram bins are [a, b) except the last, which is [a, b]
        counts[name], _ = np.histogram(vals, bins=edges)
    return HistogramSpec(bin_edges=edges, counts=counts)
