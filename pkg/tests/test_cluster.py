import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openapmax.cluster import ClusterCenters, fit_minibatch_kmeans, min_distance_to_centers
from openapmax.pattern import pattern_distance


def lloyd(X, C, iterations=100):
    """Plain full-batch Lloyd iteration, used as an independent oracle."""
    C = C.copy()
    for _ in range(iterations):
        assign = ((X[:, None, :] - C[None]) ** 2).sum(-1).argmin(1)
        new = np.array([X[assign == j].mean(0) if np.any(assign == j) else C[j] for j in range(len(C))])
        if np.array_equal(new, C):
            break
        C = new
    return C, assign


def two_groups(rng, n=40, dim=28):
    proto_a = np.zeros(dim)
    proto_b = np.zeros(dim)
    proto_b[:14] = 1
    groups = []
    for proto in (proto_a, proto_b):
        flips = rng.random((n, dim)) < 0.05
        groups.append(np.abs(proto - flips))
    X = np.concatenate(groups)
    truth = np.repeat([0, 1], n)
    return X, truth


class TestFit:
    def test_k1_is_mean(self):
        rng = np.random.default_rng(1)
        X = (rng.random((60, 28)) < 0.3).astype(float)
        c = fit_minibatch_kmeans(X, k=1, batch_size=len(X), iterations=50, seed=0)
        np.testing.assert_allclose(c.centers[0], X.mean(0), atol=1e-9, rtol=0)

    def test_two_groups_match_lloyd(self):
        rng = np.random.default_rng(2)
        X, truth = two_groups(rng)
        c = fit_minibatch_kmeans(X, k=2, batch_size=16, iterations=100, seed=3)
        oracle, _ = lloyd(X, np.stack([X[0], X[-1]]))
        for center in c.centers:
            nearest = oracle[np.abs(oracle - center).max(1).argmin()]
            assert np.abs(center - nearest).max() <= 0.1
        group_means = np.stack([X[truth == g].mean(0) for g in (0, 1)])
        for center in c.centers:
            assert np.abs(group_means - center).max(1).min() <= 0.1

    def test_assignment_accuracy_vs_lloyd(self):
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            X, truth = two_groups(rng, n=30)
            c = fit_minibatch_kmeans(X, k=2, batch_size=8, iterations=50, seed=seed)
            assign = ((X[:, None, :] - c.centers[None]) ** 2).sum(-1).argmin(1)
            acc = max(np.mean(assign == truth), np.mean(assign != truth))
            _, oracle_assign = lloyd(X, np.stack([X[0], X[-1]]))
            oracle_acc = max(np.mean(oracle_assign == truth), np.mean(oracle_assign != truth))
            assert acc >= oracle_acc - 0.05

    def test_identical_patterns(self):
        X = np.tile((np.arange(28) % 3 == 0).astype(float), (10, 1))
        c = fit_minibatch_kmeans(X, k=1, seed=0)
        assert c.inertia == 0.0

    def test_inertia_recomputed(self):
        rng = np.random.default_rng(4)
        X = (rng.random((80, 28)) < 0.4).astype(float)
        c = fit_minibatch_kmeans(X, k=3, batch_size=10, iterations=20, seed=1)
        d = ((X[:, None, :] - c.centers[None]) ** 2).sum(-1).min(1)
        assert c.inertia == pytest.approx(d.sum(), rel=1e-12)
        assert np.all((c.centers >= 0) & (c.centers <= 1))

    def test_full_batch_inertia_monotone(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(10, 60))
            X = (rng.random((n, 28)) < rng.uniform(0.1, 0.6)).astype(float)
            k = int(min(rng.integers(1, 6), len(np.unique(X, axis=0))))
            c = fit_minibatch_kmeans(X, k=k, batch_size=n, iterations=100, seed=seed)
            h = np.array(c.history)
            assert len(h) == 100
            assert np.all(np.diff(h) <= 1e-9 * max(1.0, h[0]))

    def test_seed_determinism(self):
        rng = np.random.default_rng(5)
        X = (rng.random((50, 28)) < 0.5).astype(float)
        a = fit_minibatch_kmeans(X, k=3, batch_size=7, iterations=10, seed=9)
        b = fit_minibatch_kmeans(X, k=3, batch_size=7, iterations=10, seed=9)
        assert np.array_equal(a.centers, b.centers)

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            fit_minibatch_kmeans(np.empty((0, 28)), k=1)
        with pytest.raises(ValueError, match="distinct"):
            fit_minibatch_kmeans(np.zeros((5, 28)), k=2)

    def test_serialization(self):
        c = fit_minibatch_kmeans(np.eye(28)[:5], k=2, seed=0)
        back = ClusterCenters.from_dict(c.to_dict())
        assert np.array_equal(back.centers, c.centers) and back.inertia == c.inertia


class TestMinDistance:
    def test_member(self):
        c = ClusterCenters(np.array([[0.2] * 28, [0.7] * 28]), 0.0)
        assert min_distance_to_centers(np.array([0.7] * 28), c) == 0.0

    def test_nearest_selection(self):
        c = ClusterCenters(np.stack([np.zeros(28), np.ones(28)]), 0.0)
        assert min_distance_to_centers(np.zeros(28), c) == 0.0

    def test_one_bit(self):
        c = ClusterCenters(np.stack([np.zeros(28), np.ones(28)]), 0.0)
        p = np.zeros(28)
        p[5] = 1
        assert min_distance_to_centers(p, c) == pytest.approx(min(1.0, math.sqrt(27)))

    def test_dimension_mismatch(self):
        c = ClusterCenters(np.zeros((2, 28)), 0.0)
        with pytest.raises(ValueError, match="dimension"):
            min_distance_to_centers(np.zeros(27), c)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 6))
    def test_min_bounds_every_center(self, seed, k):
        rng = np.random.default_rng(seed)
        c = ClusterCenters(rng.random((k, 28)), 0.0)
        p = (rng.random(28) < 0.5).astype(float)
        d = min_distance_to_centers(p, c)
        for center in c.centers:
            assert d <= pattern_distance(p, center) + 1e-12
