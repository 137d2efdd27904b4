import numpy as np
import pytest

from mirror_da.errors import ConsistencyError, InvalidArgumentError
from mirror_da.mirror import (DistanceKind, MirrorConfig, MirrorTable, batch_mirrors,
                              build_mirror_set, estimate_mirror, mirror_table)


class TestDistanceKind:
    def test_parse_roundtrip(self):
        d = DistanceKind.parse("gaussian:0.5")
        assert d == DistanceKind("gaussian", 0.5)
        assert DistanceKind.parse(str(d)) == d
        assert DistanceKind.parse("euclidean") == DistanceKind()

    def test_rejects_unknown(self):
        with pytest.raises(InvalidArgumentError):
            DistanceKind("manhattan")


class TestMirrorSet:
    def test_brute_force(self, rng):
        pool = rng.normal(size=(30, 3))
        q = rng.normal(size=3)
        ms = build_mirror_set(q, pool, k=4)
        d = np.linalg.norm(pool - q, axis=1)
        np.testing.assert_array_equal(ms.neighbor_indices, np.argsort(d, kind="stable")[:4])
        np.testing.assert_allclose(ms.weights, 0.25)

    def test_duplicate_pool_points_break_ties_by_index(self):
        pool = np.array([[1.0], [0.0], [1.0], [1.0]])
        ms = build_mirror_set(np.array([1.0]), pool, k=2)
        np.testing.assert_array_equal(ms.neighbor_indices, [0, 2])

    def test_gaussian_same_neighbors_far_away(self):
        # exp underflows for every pool point, ranking must still follow distance
        pool = np.array([[50.0], [40.0], [60.0]])
        for dist in (DistanceKind(), DistanceKind("gaussian", 0.1)):
            ms = build_mirror_set(np.array([0.0]), pool, k=2, distance=dist)
            np.testing.assert_array_equal(ms.neighbor_indices, [1, 0])

    def test_inverse_weights(self):
        pool = np.array([[1.0], [3.0]])
        ms = build_mirror_set(np.array([0.0]), pool, k=2, weighting="inverse")
        w = np.exp([-1.0, -3.0])
        np.testing.assert_allclose(ms.weights, w / w.sum())

    def test_estimate_is_convex_combination(self, rng):
        pool = rng.normal(size=(10, 2))
        ms = build_mirror_set(rng.normal(size=2), pool, k=3, weighting="inverse")
        m = estimate_mirror(ms, pool, "target")
        np.testing.assert_allclose(m.vector, ms.weights @ pool[ms.neighbor_indices], atol=1e-15)
        assert m.source_of_query == "target"

    def test_k1_identical_pool_is_identity(self, rng):
        x = rng.normal(size=(8, 2))
        mirrors = batch_mirrors(x, x, MirrorConfig(k=1))
        np.testing.assert_array_equal(np.array([m.vector for m in mirrors]), x)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            build_mirror_set(np.zeros(2), np.zeros((3, 3)))


class TestMirrorTable:
    def test_batch_matches_single(self, rng):
        q, pool = rng.normal(size=(5, 2)), rng.normal(size=(12, 2))
        cfg = MirrorConfig(k=3, weighting="inverse")
        table = mirror_table(q, pool, cfg)
        for i in range(5):
            ms = build_mirror_set(q[i], pool, 3, cfg.distance, "inverse")
            np.testing.assert_array_equal(table.indices[i], ms.neighbor_indices)
            np.testing.assert_allclose(table.weights[i], ms.weights)

    def test_scatter_is_adjoint_of_vectors(self, rng):
        pool = rng.normal(size=(6, 2))
        table = mirror_table(rng.normal(size=(4, 2)), pool, MirrorConfig(k=2, weighting="inverse"))
        g = rng.normal(size=(4, 2))
        lhs = (table.vectors(pool) * g).sum()
        rhs = (table.scatter(g, len(pool)) * pool).sum()
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_stale_table_detected(self):
        table = MirrorTable(np.array([[5]]), np.array([[1.0]]))
        with pytest.raises(ConsistencyError):
            table.vectors(np.zeros((3, 1)))
