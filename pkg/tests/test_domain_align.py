import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ddan.domain_align import (DomainDistanceMatrix, central_domain_select,
                               exact_wasserstein_1d, mean_abs_projection,
                               pairwise_domain_distances, sliced_wasserstein)

DATASET_NAMES = ["CUHK02", "CUHK03", "Duke", "Market", "PersonSearch"]
REFERENCE_DISTANCES = np.array([
    [0, 0.69, 1.61, 1.37, 0.87],
    [0.69, 0, 1.58, 1.44, 0.72],
    [1.61, 1.58, 0, 1.69, 1.20],
    [1.37, 1.44, 1.69, 0, 1.10],
    [0.87, 0.72, 1.20, 1.10, 0],
])


class TestExact1D:
    def test_identical(self):
        assert exact_wasserstein_1d([3, 1, 2], [2, 3, 1]) == 0.0

    def test_point_mass_translation(self):
        assert exact_wasserstein_1d([0], [1]) == 1.0

    def test_sorted_pairing(self):
        assert exact_wasserstein_1d([0, 1], [0, 3]) == pytest.approx(1.0, abs=1e-12)

    def test_unequal_sizes(self):
        # quantile functions: {0,2} vs {1}: integral |F - G| = 0.5 + 0.5
        assert exact_wasserstein_1d([0, 2], [1]) == pytest.approx(1.0, abs=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            exact_wasserstein_1d([], [1.0])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 30), st.integers(0, 2**31 - 1), st.floats(-50, 50))
    def test_translation(self, n, seed, c):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=n), rng.normal(size=n)
        base = exact_wasserstein_1d(x, y)
        assert exact_wasserstein_1d(x + c, y + c) == pytest.approx(base, abs=1e-9)
        assert exact_wasserstein_1d(x + c, y) <= base + abs(c) + 1e-9
        assert exact_wasserstein_1d(x + c, x) == pytest.approx(abs(c), abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2**31 - 1))
    def test_symmetric_exactly(self, n, m, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=n), rng.normal(size=m)
        assert exact_wasserstein_1d(x, y) == exact_wasserstein_1d(y, x)


class TestSliced:
    def test_same_sets_zero(self, rng):
        a = rng.normal(size=(10, 3))
        assert sliced_wasserstein(a, a.copy(), 64, 0) == 0.0

    def test_one_dimensional_equals_exact(self, rng):
        a, b = rng.normal(size=(7, 1)), rng.normal(size=(5, 1)) + 1
        for p in (1, 3, 50):
            assert sliced_wasserstein(a, b, p, p) == exact_wasserstein_1d(a[:, 0], b[:, 0])

    def test_translation_recovers_length(self):
        # a point mass shifted by v: normalised estimator -> |v|
        a = np.zeros((1, 3))
        b = np.array([[3.0, 0.0, 4.0]])
        assert sliced_wasserstein(a, b, 4000, 1) == pytest.approx(5.0, rel=0.03)

    def test_mean_abs_projection_values(self):
        assert mean_abs_projection(1) == pytest.approx(1.0)
        assert mean_abs_projection(2) == pytest.approx(2 / np.pi)
        assert mean_abs_projection(3) == pytest.approx(0.5)

    def test_close_to_assignment_oracle(self, rng):
        a = rng.normal(size=(6, 3))
        b = rng.normal(size=(6, 3)) + np.array([2.0, -1.0, 1.5])
        exact = oracles.assignment_w1(a, b)
        assert abs(sliced_wasserstein(a, b, 512, 3) - exact) / exact < 0.25

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sliced_wasserstein(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_deterministic(self, rng):
        a, b = rng.normal(size=(9, 4)), rng.normal(size=(11, 4))
        assert sliced_wasserstein(a, b, 32, 9) == sliced_wasserstein(a, b, 32, 9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_metric_properties(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (rng.normal(size=(int(rng.integers(1, 12)), 3)) * rng.uniform(0.1, 3)
                   for _ in range(3))
        ab = sliced_wasserstein(a, b, 16, 5)
        assert ab == sliced_wasserstein(b, a, 16, 5)
        assert ab <= sliced_wasserstein(a, c, 16, 5) + sliced_wasserstein(c, b, 16, 5) + 1e-9

    def test_variance_shrinks_with_projections(self, rng):
        a, b = rng.normal(size=(30, 5)), rng.normal(size=(30, 5)) + 0.5
        var = {p: np.var([sliced_wasserstein(a, b, p, s) for s in range(20)]) for p in (8, 512)}
        assert var[512] < var[8]


class TestPairwise:
    def test_identical_domains(self, rng):
        f = rng.normal(size=(8, 3))
        m = pairwise_domain_distances({0: f, 1: f.copy()}, 32, 0)
        assert m.values[0, 1] == 0.0

    def test_matches_direct_calls(self, rng):
        feats = {d: rng.normal(size=(5 + d, 3)) + d for d in range(3)}
        m = pairwise_domain_distances(feats, 32, 7, max_rows=None)
        for i in range(3):
            for j in range(3):
                want = 0.0 if i == j else sliced_wasserstein(feats[i], feats[j], 32, 7)
                assert m.values[i, j] == want

    def test_duplicated_domains_zero_blocks(self, rng):
        f, g = rng.normal(size=(6, 2)), rng.normal(size=(6, 2)) + 3
        m = pairwise_domain_distances({0: f, 1: f, 2: g, 3: g}, 16, 0)
        assert m.values[0, 1] == 0.0 and m.values[2, 3] == 0.0
        assert m.values[0, 2] > 0

    def test_matrix_invariants(self, rng):
        m = pairwise_domain_distances({d: rng.normal(size=(6, 4)) * (d + 1) for d in range(4)})
        assert np.allclose(m.values, m.values.T, atol=1e-9)
        assert not np.diag(m.values).any() and (m.values >= 0).all()

    def test_needs_two_domains(self, rng):
        with pytest.raises(ValueError):
            pairwise_domain_distances({0: rng.normal(size=(3, 2))})
        with pytest.raises(ValueError):
            pairwise_domain_distances({0: rng.normal(size=(3, 2)), 1: np.zeros((0, 2))})

    def test_row_cap(self, rng):
        m = pairwise_domain_distances({0: rng.normal(size=(50, 2)), 1: rng.normal(size=(50, 2))},
                                      8, 0, max_rows=10)
        assert m.meta["max_rows"] == 10


class TestCentralSelection:
    def test_reference_distance_table(self):
        m = DomainDistanceMatrix(list(range(5)), REFERENCE_DISTANCES)
        np.testing.assert_allclose(m.row_sums(), [4.54, 4.43, 6.08, 5.60, 3.89], atol=1e-9)
        assert DATASET_NAMES[central_domain_select(m)] == "PersonSearch"

    def test_all_equal_prefers_lowest_id(self):
        v = np.ones((4, 4)) - np.eye(4)
        assert central_domain_select(DomainDistanceMatrix([3, 5, 7, 9], v)) == 3

    def test_two_domains(self):
        assert central_domain_select(DomainDistanceMatrix([4, 2], [[0, 1.5], [1.5, 0]])) == 2

    def test_scale_invariant(self, rng):
        a = rng.uniform(0, 2, size=(6, 6))
        a = np.triu(a, 1)
        a = a + a.T
        base = central_domain_select(DomainDistanceMatrix(list(range(6)), a))
        for s in (1e-3, 0.5, 7.0, 1e4):
            assert central_domain_select(DomainDistanceMatrix(list(range(6)), a * s)) == base

    def test_single_domain_rejected(self):
        with pytest.raises(ValueError):
            central_domain_select(DomainDistanceMatrix([0], [[0.0]]))

    def test_invalid_matrices(self):
        with pytest.raises(ValueError):
            DomainDistanceMatrix([0, 1], [[0, 1], [2, 0]])
        with pytest.raises(ValueError):
            DomainDistanceMatrix([0, 1], [[1, 1], [1, 0]])

    def test_tsv_roundtrip(self):
        m = DomainDistanceMatrix(list(range(5)), REFERENCE_DISTANCES)
        back = DomainDistanceMatrix.from_tsv(m.to_tsv())
        np.testing.assert_allclose(back.values, REFERENCE_DISTANCES, atol=1e-6)
        assert back.domains == m.domains
