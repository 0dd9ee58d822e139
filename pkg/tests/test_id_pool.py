import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import oracles
from ddan.id_pool import IDPool, PoolError


def make_pool(alpha=0.05, dim=2):
    return IDPool({1: 0, 2: 0, 3: 1, 4: 2}, dim, alpha)


class TestRunningMean:
    def test_constant_sequence(self):
        pool = make_pool()
        v = np.array([0.25, -1.5])
        pool.update_running_mean(1, v)
        pool.update_running_mean(1, v)
        np.testing.assert_array_equal(pool.rbar[pool.row(1)], v)
        assert pool.count[pool.row(1)] == 2

    def test_two_point_mean(self):
        pool = make_pool()
        pool.update_running_mean(3, np.zeros(2))
        pool.update_running_mean(3, np.full(2, 2.0))
        np.testing.assert_array_equal(pool.rbar[pool.row(3)], np.ones(2))

    def test_matches_direct_mean(self, rng):
        pool = make_pool(dim=5)
        vs = rng.normal(size=(10, 5))
        for v in vs:
            pool.update_running_mean(2, v)
        np.testing.assert_allclose(pool.rbar[pool.row(2)], vs.mean(axis=0), atol=1e-6, rtol=0)

    def test_unknown_identity_and_bad_dim(self):
        pool = make_pool()
        with pytest.raises(PoolError):
            pool.update_running_mean(99, np.zeros(2))
        with pytest.raises(PoolError):
            pool.update_running_mean(1, np.zeros(3))

    def test_tensor_input_is_detached(self):
        pool = make_pool()
        x = torch.ones(2, requires_grad=True)
        pool.update_running_mean(1, x * 3)
        assert isinstance(pool.rbar, np.ndarray)
        np.testing.assert_array_equal(pool.rbar[pool.row(1)], [3.0, 3.0])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([1, 2, 3, 4]),
                              st.lists(st.floats(-100, 100), min_size=3, max_size=3)),
                    min_size=1, max_size=60))
    def test_property_equals_recomputed_mean(self, seq):
        pool = IDPool({1: 0, 2: 0, 3: 1, 4: 2}, 3)
        for ident, v in seq:
            pool.update_running_mean(ident, np.array(v))
        for ident in {i for i, _ in seq}:
            direct = np.mean([v for i, v in seq if i == ident], axis=0)
            np.testing.assert_allclose(pool.rbar[pool.row(ident)], direct, atol=1e-6, rtol=0)


class TestFinalize:
    def test_first_epoch_scales_by_one_minus_alpha(self):
        pool = make_pool(alpha=0.05)
        v = np.array([1.0, -2.0])
        pool.update_running_mean(1, v)
        pool.finalize_epoch()
        np.testing.assert_allclose(pool.rhat[pool.row(1)], 0.95 * v, atol=1e-15)
        assert pool.count.sum() == 0 and not pool.rbar.any() and pool.epoch == 1

    def test_alpha_one_freezes(self):
        pool = make_pool(alpha=1.0)
        pool.update_running_mean(1, np.ones(2))
        pool.finalize_epoch()
        pool.update_running_mean(1, np.full(2, 7.0))
        pool.finalize_epoch()
        np.testing.assert_array_equal(pool.rhat[pool.row(1)], np.zeros(2))

    def test_two_epoch_unroll(self):
        pool = make_pool(alpha=0.05)
        v1, v2 = np.array([0.3, 1.1]), np.array([-0.4, 2.0])
        pool.update_running_mean(2, v1)
        pool.finalize_epoch()
        pool.update_running_mean(2, v2)
        pool.finalize_epoch()
        np.testing.assert_allclose(pool.rhat[pool.row(2)], 0.05 * (0.95 * v1) + 0.95 * v2,
                                   atol=1e-15)

    def test_unseen_identity_keeps_representation(self):
        pool = make_pool()
        pool.update_running_mean(1, np.ones(2))
        pool.finalize_epoch()
        before = pool.rhat.copy()
        pool.finalize_epoch()
        pool.finalize_epoch()
        np.testing.assert_array_equal(pool.rhat, before)

    def test_bad_alpha(self):
        with pytest.raises(PoolError):
            IDPool({1: 0}, 2, alpha=1.5)


class TestQuery:
    def _pool(self):
        pool = IDPool({10: 0, 11: 0, 12: 1}, 2, alpha=0.0)
        pool.update_running_mean(10, np.array([1.0, 0.0]))
        pool.update_running_mean(11, np.array([0.0, 1.0]))
        pool.update_running_mean(12, np.array([1.0, 1.0]))
        pool.finalize_epoch()
        return pool

    def test_peripheral_query_picks_nearest_other_domain(self):
        got = self._pool().query_topk(np.array([1.0, 0.0]), 12, 1, False, k=1)
        assert [i for i, _ in got] == [10]

    def test_central_query_stays_in_domain(self):
        got = self._pool().query_topk(np.array([1.0, 0.2]), 10, 0, True, k=5)
        assert [i for i, _ in got] == [11]

    def test_k_clamped_to_eligible(self):
        got = self._pool().query_topk(np.array([0.5, 0.5]), 99, 1, False, k=10)
        assert len(got) == 2

    def test_ties_break_by_id(self):
        pool = IDPool({3: 0, 1: 0, 2: 0}, 2, alpha=0.0)
        for i in (1, 2, 3):
            pool.update_running_mean(i, np.array([1.0, 1.0]))
        pool.finalize_epoch()
        assert [i for i, _ in pool.query_topk(np.ones(2), 0, 5, False, 3)] == [1, 2, 3]

    def test_zero_entries_ineligible(self):
        pool = IDPool({1: 0, 2: 0}, 2, alpha=0.0)
        pool.update_running_mean(1, np.ones(2))
        pool.finalize_epoch()
        assert [i for i, _ in pool.query_topk(np.ones(2), 5, 3, False, 2)] == [1]

    def test_never_finalized(self):
        with pytest.raises(PoolError):
            make_pool().query_topk(np.ones(2), 1, 0, False, 1)

    def test_snapshot_is_immutable_copy(self):
        pool = self._pool()
        snap = pool.snapshot()
        with pytest.raises(ValueError):
            snap.rhat[0, 0] = 5.0
        pool.update_running_mean(10, np.array([9.0, 9.0]))
        pool.finalize_epoch()
        assert snap.rhat[0, 0] == 1.0

    def test_matches_exhaustive_scan(self, rng):
        n = 50
        doms = rng.integers(0, 4, size=n)
        pool = IDPool(dict(zip(range(n), doms.tolist())), 6, alpha=0.2)
        for i in range(n):
            if i % 7:  # leave some identities at zero
                pool.update_running_mean(i, rng.normal(size=6))
        pool.finalize_epoch()
        for _ in range(40):
            q = rng.normal(size=6)
            qid, qdom, qc = int(rng.integers(n)), int(rng.integers(4)), bool(rng.integers(2))
            k = int(rng.integers(1, 12))
            got = [i for i, _ in pool.query_topk(q, qid, qdom, qc, k)]
            want = oracles.topk_scan(pool.ids, pool.domains, pool.rhat, q, qid, qdom, qc, k)
            assert got == want


def test_state_roundtrip(rng):
    pool = make_pool(dim=3)
    pool.update_running_mean(1, rng.normal(size=3))
    pool.finalize_epoch()
    pool.update_running_mean(2, rng.normal(size=3))
    back = IDPool.from_state_dict(pool.state_dict())
    for attr in ("ids", "domains", "rbar", "count", "rhat"):
        np.testing.assert_array_equal(getattr(back, attr), getattr(pool, attr))
    assert back.epoch == pool.epoch and back.alpha == pool.alpha
