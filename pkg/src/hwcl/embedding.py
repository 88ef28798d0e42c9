"""Dense embedding primitives: L2 normalization, cosine similarity and its backward pass.

All arithmetic is float64. Rows are never normalized in place; callers keep
ownership of the raw (pre-normalization) matrices so the backward pass can
chain through the normalization exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange, ShapeMismatch, ValidationError, ZeroVector

ZERO_NORM_THRESHOLD = 1e-30


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    return arr


def _local_origin(n: int, device_id: int = 0) -> np.ndarray:
    return np.column_stack([np.full(n, device_id, dtype=np.int64), np.arange(n, dtype=np.int64)])


@dataclass(frozen=True)
class EmbeddingBatch:
    """Paired query/target embeddings for one logical batch.

    ``positive_index[i]`` is the column of query ``i``'s positive target; it
    defaults to ``i`` (the in-batch pairing).
    """

    queries: np.ndarray
    targets: np.ndarray
    positive_index: np.ndarray | None = None

    def __post_init__(self):
        q = _as_matrix(self.queries, "queries")
        t = _as_matrix(self.targets, "targets")
        n, d = q.shape
        m, d_t = t.shape
        if n < 1 or m < 1:
            raise ShapeMismatch("batch needs at least one query and one target")
        if d != d_t:
            raise ShapeMismatch(f"query dim {d} != target dim {d_t}")
        if d < 2:
            raise ShapeMismatch(f"embedding dim must be >= 2, got {d}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValidationError("embeddings must be finite")
        if self.positive_index is None:
            if m < n:
                raise ShapeMismatch("default in-batch pairing needs M >= N")
            pos = np.arange(n, dtype=np.int64)
        else:
            pos = np.asarray(self.positive_index, dtype=np.int64).reshape(-1)
            if pos.shape[0] != n:
                raise ShapeMismatch(f"positive_index has length {pos.shape[0]}, expected {n}")
        check_positives(pos, m)
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "positive_index", pos)

    @property
    def n_queries(self) -> int:
        return self.queries.shape[0]

    @property
    def n_targets(self) -> int:
        return self.targets.shape[0]

    @property
    def dim(self) -> int:
        return self.queries.shape[1]


def check_positives(positives, m: int) -> np.ndarray:
    pos = np.asarray(positives, dtype=np.int64).reshape(-1)
    if pos.size and (pos.min() < 0 or pos.max() >= m):
        raise IndexOutOfRange(f"positive index outside [0, {m})")
    return pos


@dataclass(frozen=True)
class SimilarityMatrix:
    """An N x M cosine-similarity grid.

    ``row_origin`` / ``col_origin`` are integer arrays of shape (N, 2) and
    (M, 2) holding ``(device_id, local_index)`` for every row and column.
    """

    values: np.ndarray
    row_origin: np.ndarray = field(default=None)
    col_origin: np.ndarray = field(default=None)

    def __post_init__(self):
        vals = _as_matrix(self.values, "values")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("similarities must be finite")
        n, m = vals.shape
        rows = _local_origin(n) if self.row_origin is None else np.asarray(self.row_origin, dtype=np.int64)
        cols = _local_origin(m) if self.col_origin is None else np.asarray(self.col_origin, dtype=np.int64)
        if rows.shape != (n, 2) or cols.shape != (m, 2):
            raise ShapeMismatch("origin arrays must have shape (N, 2) and (M, 2)")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "row_origin", rows)
        object.__setattr__(self, "col_origin", cols)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def as_values(sim) -> np.ndarray:
    """Return the raw similarity array from a SimilarityMatrix or array-like."""
    if isinstance(sim, SimilarityMatrix):
        return sim.values
    return _as_matrix(sim, "similarities")


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm.

    >>> l2_normalize([3.0, 4.0])
    array([0.6, 0.8])
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm):
        raise ValidationError("vector must be finite")
    if norm <= ZERO_NORM_THRESHOLD:
        raise ZeroVector(f"cannot normalize vector with norm {norm:g}")
    return v / norm


def row_norms(x: np.ndarray, name: str = "matrix") -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms <= ZERO_NORM_THRESHOLD)
    if bad.size:
        raise ZeroVector(f"{name} row {int(bad[0])} has norm {norms[bad[0]]:g}")
    return norms


def normalize_rows(x, name: str = "matrix") -> np.ndarray:
    x = _as_matrix(x, name)
    return x / row_norms(x, name)[:, None]


def cosine_matrix(batch: EmbeddingBatch, row_origin=None, col_origin=None) -> SimilarityMatrix:
    """Cosine similarity between every query and every target."""
    qn = normalize_rows(batch.queries, "queries")
    tn = normalize_rows(batch.targets, "targets")
    return SimilarityMatrix(qn @ tn.T, row_origin=row_origin, col_origin=col_origin)


def cosine_backward(batch: EmbeddingBatch, dL_dS) -> tuple[np.ndarray, np.ndarray]:
    """Pull an upstream gradient on the similarity grid back to the raw embeddings.

    Uses d cos(u, v) / du = v / (|u||v|) - cos(u, v) * u / |u|^2, summed over
    every (i, j) cell. Returns ``(dL_dqueries, dL_dtargets)``.
    """
    g = _as_matrix(dL_dS, "dL_dS")
    if g.shape != (batch.n_queries, batch.n_targets):
        raise ShapeMismatch(f"upstream gradient shape {g.shape} != {(batch.n_queries, batch.n_targets)}")
    q, t = batch.queries, batch.targets
    qnorm = row_norms(q, "queries")
    tnorm = row_norms(t, "targets")
    qn = q / qnorm[:, None]
    tn = t / tnorm[:, None]
    cos = qn @ tn.T
    gc = g * cos
    d_q = (g @ tn) / qnorm[:, None] - gc.sum(axis=1)[:, None] * q / (qnorm**2)[:, None]
    d_t = (g.T @ qn) / tnorm[:, None] - gc.sum(axis=0)[:, None] * t / (tnorm**2)[:, None]
    return d_q, d_t
