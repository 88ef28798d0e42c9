import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hwcl.analysis import (
    SimilarityGapReport,
    classify_negatives,
    default_bin_edges,
    gap_report,
    histogram,
    positive_ranks,
    precision_at_1,
    recall_at_k,
)
from hwcl.errors import InvalidK, NoNegatives, OutOfRangeValue, ValidationError


def brute_sets(row, p, k):
    negs = sorted(((row[j], j) for j in range(len(row)) if j != p))
    kk = min(k, len(negs))
    easy = [j for _, j in negs[:kk]]
    hard = [j for _, j in sorted(negs, key=lambda t: (-t[0], t[1]))[:kk]]
    return hard, easy


class TestClassify:
    def test_direct_ordering(self):
        s = np.array([[0.9, 0.8, 0.7, 0.1, 0.0]])
        (sets,) = classify_negatives(s, [0], k=2)
        np.testing.assert_array_equal(s[0, sets.hard], [0.8, 0.7])
        np.testing.assert_array_equal(s[0, sets.easy], [0.0, 0.1])

    def test_clamped_k(self):
        s = np.array([[0.9, 0.2, 0.5]])
        (sets,) = classify_negatives(s, [0], k=5)
        assert set(sets.hard) == set(sets.easy) == {1, 2}

    def test_ties_by_column(self):
        s = np.array([[1.0, 0.5, 0.5, 0.5]])
        (sets,) = classify_negatives(s, [0], k=2)
        np.testing.assert_array_equal(sets.hard, [1, 2])
        np.testing.assert_array_equal(sets.easy, [1, 2])

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        s = np.round(rng.uniform(-1, 1, (10, 10)), 1)  # rounding forces ties
        pos = rng.permutation(10)
        for i, sets in enumerate(classify_negatives(s, pos, 5)):
            hard, easy = brute_sets(s[i], pos[i], 5)
            assert list(sets.hard) == hard and list(sets.easy) == easy

    def test_no_negatives(self):
        with pytest.raises(NoNegatives):
            classify_negatives(np.ones((3, 1)), [0, 0, 0])

    def test_bad_k(self):
        with pytest.raises(InvalidK):
            classify_negatives(np.eye(3), range(3), k=0)


class TestGapReport:
    def test_identity(self):
        r = gap_report(np.eye(6), np.arange(6), k=5)
        assert (r.mean_positive, r.mean_hard_negative, r.mean_easy_negative) == (1.0, 0.0, 0.0)
        assert r.hard_gap == -1.0 and r.precision_at_1 == 1.0 and r.k_hard == 5

    def test_sign_convention(self):
        # positive 0.71 vs hard 0.65 -> printed as 0.65(-0.06)
        s = np.array([[0.71, 0.65], [0.65, 0.71]])
        r = gap_report(s, [0, 1], k=1)
        assert r.hard_gap == pytest.approx(-0.06, abs=1e-12)
        assert r.easy_gap == pytest.approx(-0.06, abs=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.uniform(-1, 1, (8, 8))
        pos = np.arange(8)
        hard, easy = [], []
        for i in range(8):
            h, e = brute_sets(s[i], i, 3)
            hard += [s[i, j] for j in h]
            easy += [s[i, j] for j in e]
        r = gap_report(s, pos, k=3)
        assert r.mean_positive == pytest.approx(np.mean(np.diag(s)), abs=1e-14)
        assert r.mean_hard_negative == pytest.approx(np.mean(hard), abs=1e-14)
        assert r.mean_easy_negative == pytest.approx(np.mean(easy), abs=1e-14)

    @settings(max_examples=40)
    @given(st.integers(0, 10_000))
    def test_invariants(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 12))
        s = rng.uniform(-1, 1, (n, n))
        r = gap_report(s, np.arange(n), k=int(rng.integers(1, 7)))
        assert r.mean_easy_negative <= r.mean_hard_negative + 1e-12
        assert r.mean_hard_negative <= s.max() + 1e-12
        assert 0.0 <= r.precision_at_1 <= 1.0

    @settings(max_examples=30)
    @given(st.integers(0, 10_000))
    def test_row_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.uniform(-1, 1, (7, 9))
        pos = rng.integers(0, 9, 7)
        perm = rng.permutation(7)
        a, b = gap_report(s, pos), gap_report(s[perm], pos[perm])
        for f in ("mean_positive", "mean_hard_negative", "mean_easy_negative", "precision_at_1"):
            assert getattr(a, f) == pytest.approx(getattr(b, f), abs=1e-12)

    def test_json_roundtrip(self):
        r = gap_report(np.eye(3), np.arange(3))
        doc = json.loads(r.to_json())
        assert doc["schema_version"] == 1
        assert SimilarityGapReport.from_dict(doc) == r


class TestRetrievalMetrics:
    def test_identity(self):
        assert precision_at_1(np.eye(4), np.arange(4)) == 1.0

    def test_anti_diagonal(self):
        s = np.fliplr(np.eye(4)) + 0.1 * np.eye(4)
        assert precision_at_1(s, np.arange(4)) == 0.0

    def test_ties_go_to_lowest_index(self):
        assert precision_at_1(np.array([[0.5, 0.5]]), [1]) == 0.0
        assert precision_at_1(np.array([[0.5, 0.5]]), [0]) == 1.0

    @pytest.mark.parametrize("seed", range(3))
    def test_precision_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        s = np.round(rng.uniform(-1, 1, (20, 20)), 1)
        pos = rng.integers(0, 20, 20)
        hits = [max(range(20), key=lambda j: (s[i, j], -j)) == pos[i] for i in range(20)]
        assert precision_at_1(s, pos) == np.mean(hits)

    @pytest.mark.parametrize("seed", range(3))
    def test_recall_sort_oracle(self, seed):
        rng = np.random.default_rng(seed)
        s = np.round(rng.uniform(-1, 1, (15, 15)), 1)
        pos = np.arange(15)
        hits = [pos[i] in sorted(range(15), key=lambda j: (-s[i, j], j))[:5] for i in range(15)]
        assert recall_at_k(s, pos, 5) == np.mean(hits)

    def test_recall_k_equals_m(self, rng):
        s = rng.uniform(-1, 1, (6, 6))
        assert recall_at_k(s, np.arange(6), 6) == 1.0

    def test_recall_1_is_precision(self, rng):
        s = rng.uniform(-1, 1, (9, 9))
        assert recall_at_k(s, np.arange(9), 1) == precision_at_1(s, np.arange(9))

    @pytest.mark.parametrize("k", [0, 7])
    def test_invalid_k(self, k):
        with pytest.raises(InvalidK):
            recall_at_k(np.eye(6), np.arange(6), k)

    @settings(max_examples=40)
    @given(st.integers(0, 10_000), st.sampled_from([np.exp, np.tanh, lambda x: 3 * x + 1, np.arctan]))
    def test_monotone_transform_invariance(self, seed, fn):
        rng = np.random.default_rng(seed)
        s = rng.uniform(-1, 1, (8, 8))
        assert precision_at_1(fn(s), np.arange(8)) == precision_at_1(s, np.arange(8))

    def test_ranks(self):
        s = np.array([[0.2, 0.9, 0.2, 0.1]])
        np.testing.assert_array_equal(positive_ranks(s, [2]), [2])


class TestHistogram:
    def test_closed_last_bin(self):
        s = np.array([[1.0, -0.5]])
        h = histogram(s, [0], classify_negatives(s, [0], 1), [-1.0, 0.0, 1.0])
        np.testing.assert_array_equal(h.counts["positive"], [0, 1])

    def test_edge_goes_right(self):
        s = np.array([[0.0, -0.5]])
        h = histogram(s, [0], classify_negatives(s, [0], 1), [-1.0, 0.0, 1.0])
        np.testing.assert_array_equal(h.counts["positive"], [0, 1])
        np.testing.assert_array_equal(h.counts["hard_negative"], [1, 0])

    def test_population(self, rng):
        s = rng.uniform(-1, 1, (10, 10))
        neg = classify_negatives(s, np.arange(10), 5)
        h = histogram(s, np.arange(10), neg)
        assert h.counts["positive"].sum() == 10
        assert h.counts["hard_negative"].sum() == 50 and h.counts["easy_negative"].sum() == 50

    def test_out_of_range(self):
        s = np.array([[0.5, 0.2]])
        with pytest.raises(OutOfRangeValue):
            histogram(s, [0], classify_negatives(s, [0], 1), [0.3, 1.0])

    def test_rounding_past_one_tolerated(self):
        s = np.array([[1.0 + 1e-15, 0.0]])
        h = histogram(s, [0], classify_negatives(s, [0], 1))
        assert h.counts["positive"][-1] == 1

    def test_bad_edges(self):
        s = np.eye(2)
        with pytest.raises(ValidationError):
            histogram(s, [0, 1], classify_negatives(s, [0, 1], 1), [0.0, 0.0, 1.0])

    def test_json_schema(self):
        s = np.eye(3)
        doc = histogram(s, np.arange(3), classify_negatives(s, np.arange(3)), default_bin_edges(4)).to_dict()
        assert doc["schema_version"] == 1 and len(doc["bins"]) == 4
        assert set(doc["bins"][0]) == {"edge_low", "edge_high", "counts_by_class"}
        assert set(doc["bins"][0]["counts_by_class"]) == {"positive", "hard_negative", "easy_negative"}
