import numpy as np
import pytest
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist

from services.evaluation import (
    ClusterAssignment,
    centroid_report,
    evaluate_embedding,
    misclassification,
    pca_fit,
    pca_project,
    setcover_subsample,
    ward_cluster,
)
from services.kiae_model import LatentEmbedding
from services.numerics import make_rng
from utils.errors import DomainError


def _partition(labels):
    groups = {}
    for position, label in enumerate(labels):
        groups.setdefault(int(label), []).append(position)
    return sorted(tuple(g) for g in groups.values())


def _greedy_ward_oracle(X, K):
    """Recompute every pairwise Ward cost at each step; smaller slot survives."""
    clusters = {i: [i] for i in range(len(X))}
    history = []
    while len(clusters) > K:
        best = None
        slots = sorted(clusters)
        for a_pos, a in enumerate(slots):
            for b in slots[a_pos + 1:]:
                A, B = X[clusters[a]], X[clusters[b]]
                gap = A.mean(axis=0) - B.mean(axis=0)
                cost = len(A) * len(B) / (len(A) + len(B)) * float(gap @ gap)
                if best is None or cost < best[2]:
                    best = (a, b, cost)
        a, b, cost = best
        clusters[a] += clusters.pop(b)
        history.append(best)
    return history


class TestWard:
    def test_matches_brute_force_oracle(self):
        gen = make_rng(40)
        for _ in range(200):
            n = int(gen.integers(2, 9))
            K = int(gen.integers(1, n + 1))
            X = gen.standard_normal((n, 2))
            result = ward_cluster(X, K)
            expected = _greedy_ward_oracle(X, K)
            assert [(i, j) for i, j, _ in result.merge_history] == [(i, j) for i, j, _ in expected]
            assert np.allclose([c for _, _, c in result.merge_history], [c for _, _, c in expected], rtol=1e-9)

    def test_no_merges_when_every_point_is_a_cluster(self):
        result = ward_cluster(np.arange(8.0).reshape(4, 2), 4)
        assert result.merge_history == ()
        assert result.cluster_index.tolist() == [0, 1, 2, 3]

    def test_two_tight_groups(self):
        gen = make_rng(1)
        X = np.vstack([gen.random((5, 2)), 100 + gen.random((5, 2))])
        result = ward_cluster(X, 2)
        assert _partition(result.cluster_index) == [(0, 1, 2, 3, 4), (5, 6, 7, 8, 9)]
        assert len(result.merge_history) == 8

    def test_agrees_with_scipy_partition(self):
        gen = make_rng(2)
        for _ in range(3):
            X = gen.standard_normal((30, 3))
            ours = ward_cluster(X, 3).cluster_index
            theirs = fcluster(linkage(X, method="ward"), t=3, criterion="maxclust")
            assert _partition(ours) == _partition(theirs)

    def test_permutation_equivariant(self):
        gen = make_rng(3)
        X = gen.standard_normal((15, 2))
        order = gen.permutation(15)
        base = ward_cluster(X, 3).cluster_index
        shuffled = ward_cluster(X[order], 3).cluster_index
        assert _partition(base[order]) == _partition(shuffled)

    def test_k_larger_than_n(self):
        with pytest.raises(DomainError):
            ward_cluster(np.zeros((2, 2)), 3)


def _assignment(cluster_index, K):
    cluster_index = np.asarray(cluster_index)
    return ClusterAssignment(tuple(str(i) for i in range(len(cluster_index))), cluster_index, K, ())


class TestMisclassification:
    def test_identity_and_relabelling(self):
        labels = np.array([0, 0, 1, 1, 2])
        assert misclassification(_assignment(labels, 3), labels)[0] == 0.0
        swapped = np.array([1, 1, 0, 0, 2])
        rate, mapping = misclassification(_assignment(swapped, 3), labels)
        assert rate == 0.0
        assert mapping == (1, 0, 2)

    def test_hand_example(self):
        rate, _ = misclassification(_assignment([0, 0, 0, 1], 2), np.array([0, 0, 1, 1]))
        assert rate == 0.25

    def test_enumeration_equals_assignment(self):
        gen = make_rng(50)
        for _ in range(100):
            K = int(gen.integers(2, 5))
            n = int(gen.integers(K, 30))
            labels = gen.permutation(np.arange(n) % K)
            pred = _assignment(gen.integers(0, K, n), K)
            exhaustive, _ = misclassification(pred, labels, method="exhaustive")
            assignment, _ = misclassification(pred, labels, method="assignment")
            assert exhaustive == assignment

    def test_large_k_uses_assignment(self):
        labels = np.arange(12) % 10
        pred = _assignment((labels + 3) % 10, 10)
        assert misclassification(pred, labels)[0] == 0.0

    def test_sample_ids_are_aligned(self):
        pred = _assignment([0, 1, 1], 2)
        rate, _ = misclassification(pred, [1, 1, 0], sample_ids=("2", "1", "0"))
        assert rate == 0.0
        with pytest.raises(DomainError):
            misclassification(pred, [0, 1, 1], sample_ids=("a", "b", "c"))

    def test_label_count_must_match_k(self):
        with pytest.raises(DomainError):
            misclassification(_assignment([0, 1, 2], 3), [0, 1, 1])


class TestPca:
    def test_variance_identity_and_distance_preservation(self):
        gen = make_rng(60)
        for _ in range(50):
            X = gen.standard_normal((20, 4)) * gen.uniform(0.5, 3.0, 4)
            projected, eigenvalues = pca_project(X, 4)
            assert np.allclose(projected.var(axis=0, ddof=1), eigenvalues, rtol=0, atol=1e-8)
            assert np.allclose(pdist(projected), pdist(X), rtol=0, atol=1e-8)

    def test_rank_one_data(self):
        X = np.column_stack([np.arange(6.0), np.zeros(6)])
        projected, eigenvalues = pca_project(X, 2)
        assert np.isclose(eigenvalues[1], 0.0, atol=1e-12)
        assert np.allclose(np.abs(pca_fit(X).components[:, 0]), [1.0, 0.0])
        assert np.allclose(projected[:, 1], 0.0, atol=1e-12)

    def test_rotation_preserves_eigenvalues(self):
        gen = make_rng(61)
        X = gen.standard_normal((30, 2)) * [3.0, 1.0]
        angle = 0.7
        rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        assert np.allclose(pca_fit(X).eigenvalues, pca_fit(X @ rotation.T).eigenvalues, atol=1e-8)

    def test_sign_convention(self):
        fit = pca_fit(make_rng(62).standard_normal((25, 3)))
        for c in range(3):
            first = fit.components[np.flatnonzero(np.abs(fit.components[:, c]) > 1e-12)[0], c]
            assert first > 0

    def test_identical_points(self):
        projected, eigenvalues = pca_project(np.ones((5, 3)), 2)
        assert np.all(projected == 0) and np.all(eigenvalues == 0)

    def test_component_bounds(self):
        with pytest.raises(DomainError):
            pca_project(np.zeros((3, 2)), 3)


class TestSetcover:
    def test_full_and_empty_selection(self):
        X = make_rng(70).standard_normal((12, 2))
        assert sorted(setcover_subsample(X, 12)) == list(range(12))
        assert setcover_subsample(X, 0) == []
        with pytest.raises(DomainError):
            setcover_subsample(X, 13)

    def test_line_segment_picks_the_ends(self):
        X = np.column_stack([np.arange(11.0), np.zeros(11)])
        chosen = setcover_subsample(X, 3)
        assert chosen[0] == 5
        assert sorted(chosen[1:]) == [0, 10]

    def test_spread_beats_random_subsets(self):
        gen = make_rng(71)
        wins = 0
        for _ in range(100):
            X = gen.standard_normal((50, 2))
            chosen = setcover_subsample(X, 8)
            random_pick = gen.choice(50, 8, replace=False)
            wins += pdist(X[chosen]).min() >= pdist(X[random_pick]).min()
        assert wins >= 95

    def test_deterministic(self):
        X = make_rng(72).standard_normal((40, 3))
        assert setcover_subsample(X, 10) == setcover_subsample(X, 10)


class TestCentroids:
    def test_singletons_and_unit_distance(self):
        z = LatentEmbedding(("a", "b"), np.array([[0.0, 0.0], [1.0, 0.0]]))
        report = centroid_report(z, ClusterAssignment(("a", "b"), np.array([0, 1]), 2, ()))
        assert np.array_equal(report.centroid_vectors, z.vectors)
        assert np.allclose(report.centroid_distances, [[0.0, 1.0], [1.0, 0.0]])

    def test_empty_cluster(self):
        z = LatentEmbedding(("a", "b"), np.zeros((2, 2)))
        with pytest.raises(DomainError):
            centroid_report(z, ClusterAssignment(("a", "b"), np.array([0, 0]), 2, ()))

    def test_evaluate_separated_embedding(self):
        gen = make_rng(80)
        labels = np.repeat([0, 1, 2], 10)
        centres = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
        z = LatentEmbedding(tuple(str(i) for i in range(30)), centres[labels] + gen.standard_normal((30, 2)))
        report = evaluate_embedding(z, labels, 3, "fit")
        assert report.misclassification == 0.0
        d = report.centroid_distances
        assert np.allclose(d, d.T) and np.all(np.diag(d) == 0)
        assert d[0, 1] <= d[0, 2] + d[2, 1] + 1e-12
