import numpy as np
import pytest

from hiersg.clustering import ClusterResult, EmbeddingTable, hierarchy_from_clusters, kmeans
from hiersg.core_model import RelationVocabulary, validate_hierarchy
from hiersg.error_handler import DimensionMismatch, EmptyCategoryError, TooFewPoints
from hiersg.synthetic import make_blobs


def table_from(points):
    return EmbeddingTable({f"rel_{i}": p for i, p in enumerate(points)})


def naive_inertia(X, k, rng, iters=50):
    """Plain Lloyd from k distinct random points."""
    centroids = X[rng.choice(len(X), size=k, replace=False)]
    for _ in range(iters):
        labels = np.argmin(((X[:, None] - centroids[None]) ** 2).sum(axis=2), axis=1)
        centroids = np.stack([X[labels == c].mean(axis=0) if np.any(labels == c) else centroids[c]
                              for c in range(k)])
    labels = np.argmin(((X[:, None] - centroids[None]) ** 2).sum(axis=2), axis=1)
    return float(((X - centroids[labels]) ** 2).sum())


class TestKMeans:
    def test_recovers_separated_blobs(self):
        points, blobs = make_blobs(num_blobs=3, points_per_blob=8, dim=4)
        result = kmeans(table_from(points), k=3, seed=0)
        for cluster in range(3):
            members = [int(name.split('_')[1]) for name in result.members(cluster)]
            assert len({int(blobs[i]) for i in members}) == 1
            assert len(members) == 8

    def test_inertia_never_increases(self):
        rng = np.random.default_rng(4)
        for seed in range(10):
            result = kmeans(table_from(rng.normal(size=(30, 3))), k=4, seed=seed)
            history = result.inertia_history
            assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))
            assert result.inertia == history[-1]

    def test_not_worse_than_random_restarts(self):
        points, _ = make_blobs(num_blobs=3, points_per_blob=4, dim=2, radius=1.0, separation=5.0, seed=2)
        result = kmeans(table_from(points), k=3, seed=0, n_init=10)
        rng = np.random.default_rng(0)
        best = min(naive_inertia(points, 3, rng) for _ in range(100))
        assert result.inertia <= best + 1e-6

    def test_fixed_seed_is_deterministic(self):
        points = np.random.default_rng(9).normal(size=(20, 5))
        a = kmeans(table_from(points), k=3, seed=7)
        b = kmeans(table_from(points), k=3, seed=7)
        assert a.assignment == b.assignment
        assert np.array_equal(a.centroids, b.centroids)

    def test_every_cluster_is_non_empty(self):
        points = np.vstack([np.zeros((6, 2)), np.ones((2, 2))])
        result = kmeans(table_from(points), k=4, seed=1)
        assert sorted(set(result.assignment.values())) == [0, 1, 2, 3]

    def test_l2_normalization_groups_directions(self):
        points = np.array([[1.0, 0.0], [10.0, 0.0], [0.0, 1.0], [0.0, 20.0]])
        result = kmeans(table_from(points), k=2, seed=0, l2_normalize=True)
        assert result.assignment['rel_0'] == result.assignment['rel_1']
        assert result.assignment['rel_2'] == result.assignment['rel_3']
        assert result.inertia == pytest.approx(0.0, abs=1e-12)

    def test_k_larger_than_table(self):
        with pytest.raises(TooFewPoints):
            kmeans(table_from(np.eye(3)), k=4)

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            kmeans(table_from(np.eye(3)), k=0)


class TestEmbeddingTable:
    def test_mixed_dimensions_rejected(self):
        with pytest.raises(DimensionMismatch):
            EmbeddingTable({'on': np.zeros(3), 'near': np.zeros(4)})

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingTable({'on': np.array([0.0, np.inf])})

    def test_matrix_rows_follow_names(self):
        table = EmbeddingTable({'b': [1.0, 2.0], 'a': [3.0, 4.0]})
        assert table.names == ['b', 'a']
        assert table.dimension == 2
        assert table.matrix().tolist() == [[1.0, 2.0], [3.0, 4.0]]


class TestHierarchyFromClusters:
    def test_clusters_become_valid_partition(self):
        points, _ = make_blobs(num_blobs=3, points_per_blob=4, dim=3)
        table = table_from(points)
        vocab = RelationVocabulary(tuple(table.names), ('thing',))
        h = hierarchy_from_clusters(kmeans(table, k=3, seed=0), vocab)
        assert validate_hierarchy(h, vocab) == []
        assert h.super_categories == ('cluster_0', 'cluster_1', 'cluster_2')
        for members in h.within_category_order:
            assert list(members) == sorted(members)

    def test_custom_names(self):
        table = table_from(np.array([[0.0], [10.0]]))
        vocab = RelationVocabulary(('rel_0', 'rel_1'), ('thing',))
        h = hierarchy_from_clusters(kmeans(table, k=2, seed=0), vocab, names=('low', 'high'))
        assert set(h.super_categories) == {'low', 'high'}

    def test_empty_cluster_rejected(self):
        result = ClusterResult(assignment={'rel_0': 0, 'rel_1': 0}, centroids=np.zeros((2, 1)), inertia=0.0)
        vocab = RelationVocabulary(('rel_0', 'rel_1'), ('thing',))
        with pytest.raises(EmptyCategoryError):
            hierarchy_from_clusters(result, vocab)
