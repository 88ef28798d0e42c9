import numpy as np
import pytest

from hwcl.device_sim import DeviceShard, cross_device_backward, cross_device_loss, gather_targets, partition_batch
from hwcl.embedding import EmbeddingBatch, cosine_backward, cosine_matrix
from hwcl.errors import DimensionMismatch, DuplicateDeviceId, ValidationError
from hwcl.losses import LossConfig, RewardSpec, hardness_weighted, infonce

CFG = LossConfig(tau=0.02, alpha=9.0)


def make_batch(n, d=5, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingBatch(rng.standard_normal((n, d)), rng.standard_normal((n, d)))


def monolithic(batch, cfg=CFG, reward=None):
    sim = cosine_matrix(batch)
    return hardness_weighted(sim, batch.positive_index, cfg, reward) if cfg.variant == "hardness_weighted" else infonce(sim, batch.positive_index, cfg)


class TestGather:
    def test_single_device_noop(self):
        b = make_batch(4)
        (view,) = gather_targets([DeviceShard(0, b)])
        np.testing.assert_array_equal(view.global_targets, b.targets)
        np.testing.assert_array_equal(view.positive_offset, [0, 1, 2, 3])

    def test_figure_shape(self):
        views = gather_targets(partition_batch(make_batch(12), 3))
        assert len(views) == 3
        for k, v in enumerate(views):
            assert v.global_targets.shape[0] == 12
            assert v.n_negatives == 11
            np.testing.assert_array_equal(v.positive_offset, 4 * k + np.arange(4))

    def test_concatenation_oracle(self):
        a, b = make_batch(3, seed=1), make_batch(5, seed=2)
        views = gather_targets([DeviceShard(1, b), DeviceShard(0, a)])
        ref = np.vstack([a.targets, b.targets])
        for v in views:
            np.testing.assert_array_equal(v.global_targets, ref)
        assert [v.device_id for v in views] == [0, 1]
        np.testing.assert_array_equal(views[1].positive_offset, 3 + np.arange(5))
        np.testing.assert_array_equal(views[1].col_origin[3], [1, 0])

    def test_duplicate_ids(self):
        b = make_batch(2)
        with pytest.raises(DuplicateDeviceId):
            gather_targets([DeviceShard(0, b), DeviceShard(0, b)])

    def test_non_contiguous_ids(self):
        with pytest.raises(ValidationError):
            gather_targets([DeviceShard(0, make_batch(2)), DeviceShard(2, make_batch(2))])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            gather_targets([DeviceShard(0, make_batch(2, d=3)), DeviceShard(1, make_batch(2, d=4))])

    def test_empty(self):
        with pytest.raises(ValidationError):
            gather_targets([])


class TestCrossDeviceLoss:
    def test_two_by_two_equals_monolithic(self):
        b = make_batch(4)
        total, per_device = cross_device_loss(partition_batch(b, 2), CFG)
        mono = monolithic(b)
        assert len(per_device) == 2
        np.testing.assert_allclose(total.per_row_loss, mono.per_row_loss, rtol=0, atol=1e-12)
        assert abs(total.loss - mono.loss) <= 1e-12

    def test_single_device(self):
        b = make_batch(6)
        total, (only,) = cross_device_loss(partition_batch(b, 1), CFG)
        assert total.loss == pytest.approx(monolithic(b).loss, abs=1e-12)
        assert only.loss == total.loss

    @pytest.mark.parametrize("cfg", [CFG, LossConfig.infonce()])
    def test_k4_random(self, cfg):
        b = make_batch(32, seed=3)
        total, _ = cross_device_loss(partition_batch(b, 4), cfg)
        mono = monolithic(b, cfg)
        assert abs(total.loss - mono.loss) <= 1e-12
        np.testing.assert_allclose(total.grad_wrt_sim, mono.grad_wrt_sim, rtol=0, atol=1e-12)
        np.testing.assert_allclose(total.reward_matrix, mono.reward_matrix, rtol=0, atol=1e-12)

    def test_unequal_shards(self):
        b = make_batch(7, seed=4)
        total, per_device = cross_device_loss(partition_batch(b, 3), CFG)
        assert [r.n_rows for r in per_device] == [3, 2, 2]
        assert abs(total.loss - monolithic(b).loss) <= 1e-12

    def test_per_device_mean_is_local(self):
        b = make_batch(8, seed=5)
        total, per_device = cross_device_loss(partition_batch(b, 2), CFG)
        assert per_device[0].loss == pytest.approx(total.per_row_loss[:4].mean(), abs=1e-15)

    def test_external_reward_global_layout(self):
        b = make_batch(6, seed=6)
        r = np.random.default_rng(0).uniform(0, 3, (6, 6))
        total, _ = cross_device_loss(partition_batch(b, 3), CFG, RewardSpec.external(r))
        assert abs(total.loss - monolithic(b, reward=RewardSpec.external(r)).loss) <= 1e-12

    def test_permuted_device_ids(self):
        b = make_batch(8, seed=7)
        shards = partition_batch(b, 4)
        perm = [2, 0, 3, 1]
        relabeled = [DeviceShard(perm[s.device_id], s.local_batch) for s in shards]
        t1, p1 = cross_device_loss(shards, CFG)
        t2, p2 = cross_device_loss(relabeled, CFG)
        assert abs(t1.loss - t2.loss) <= 1e-12
        for k in range(4):
            np.testing.assert_allclose(np.sort(p1[k].per_row_loss), np.sort(p2[perm[k]].per_row_loss), atol=1e-12)

    def test_parallel_workers_identical(self):
        b = make_batch(16, seed=8)
        a, _ = cross_device_loss(partition_batch(b, 4), CFG)
        c, _ = cross_device_loss(partition_batch(b, 4), CFG, max_workers=4)
        np.testing.assert_array_equal(a.per_row_loss, c.per_row_loss)
        assert a.loss == c.loss


class TestBackward:
    @pytest.mark.parametrize("k", [1, 2, 4])
    def test_matches_monolithic_backward(self, k):
        b = make_batch(8, seed=9)
        shards = partition_batch(b, k)
        total, _ = cross_device_loss(shards, CFG)
        dqs, dt = cross_device_backward(shards, total)
        mono = monolithic(b)
        mq, mt = cosine_backward(b, mono.grad_wrt_sim)
        np.testing.assert_allclose(np.vstack(dqs), mq, atol=1e-12)
        np.testing.assert_allclose(dt, mt, atol=1e-12)


class TestPartition:
    def test_bounds(self):
        with pytest.raises(ValidationError):
            partition_batch(make_batch(3), 4)

    def test_requires_in_batch_pairing(self):
        b = EmbeddingBatch(np.eye(2), np.eye(2), positive_index=[1, 0])
        with pytest.raises(ValidationError):
            partition_batch(b, 2)
