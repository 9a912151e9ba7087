"""Everything downstream of the latent space: clustering, scoring, projection."""

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist, squareform

from services.kiae_model import LatentEmbedding
from services.numerics import as_matrix, sym_eigen
from utils.errors import DomainError

EXHAUSTIVE_MAX_K = 8
SIGN_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ClusterAssignment:
    """Cluster index per sample plus the Ward merge sequence.

    Merges are recorded as (left slot, right slot, cost); a merged cluster keeps
    the smaller slot index. Cluster indices are numbered by first appearance.
    """

    sample_ids: Tuple[str, ...]
    cluster_index: np.ndarray
    K: int
    merge_history: Tuple[Tuple[int, int, float], ...]


@dataclass(frozen=True)
class CentroidReport:
    centroid_vectors: np.ndarray
    centroid_distances: np.ndarray


@dataclass(frozen=True)
class EvalReport:
    misclassification: float
    best_label_map: Tuple[int, ...]
    centroid_vectors: np.ndarray
    centroid_distances: np.ndarray
    split_tag: str
    assignment: ClusterAssignment


@dataclass(frozen=True)
class PcaFit:
    mean: np.ndarray
    eigenvalues: np.ndarray
    components: np.ndarray

    def transform(self, points, components: int) -> np.ndarray:
        X = as_matrix(points, "points")
        return (X - self.mean) @ self.components[:, :components]


def _canonical_labels(owner: np.ndarray) -> np.ndarray:
    relabel = {}
    for slot in owner:
        relabel.setdefault(int(slot), len(relabel))
    return np.array([relabel[int(slot)] for slot in owner], dtype=np.int64)


def ward_cluster(points, K: int, sample_ids: Optional[Sequence[str]] = None) -> ClusterAssignment:
    """Agglomerative Ward clustering with Lance-Williams cost updates.

    The cost of merging A and B is the increase in within-cluster sum of
    squares, |A||B|/(|A|+|B|) * ||c_A - c_B||^2. Equal costs go to the
    smallest (left, right) pair.
    """
    X = as_matrix(points, "points")
    n = X.shape[0]
    if not 1 <= K <= n:
        raise DomainError(f"need 1 <= K <= n, got K={K}, n={n}")
    ids = tuple(sample_ids) if sample_ids is not None else tuple(str(i) for i in range(n))

    D = squareform(pdist(X, "sqeuclidean")) / 2.0 if n > 1 else np.zeros((1, 1))
    np.fill_diagonal(D, np.inf)
    sizes = np.ones(n)
    active = np.ones(n, dtype=bool)
    owner = np.arange(n)
    row_arg = np.argmin(D, axis=1)
    row_min = D[np.arange(n), row_arg]
    history = []

    for _ in range(n - K):
        i = int(np.argmin(row_min))
        j = int(row_arg[i])
        if j < i:
            i, j = j, i
        cost = float(D[i, j])
        history.append((i, j, cost))

        ni, nj = sizes[i], sizes[j]
        merged = ((sizes + ni) * D[i] + (sizes + nj) * D[j] - sizes * cost) / (sizes + ni + nj)
        merged[~active] = np.inf
        merged[[i, j]] = np.inf
        D[i, :] = merged
        D[:, i] = merged
        D[j, :] = np.inf
        D[:, j] = np.inf
        active[j] = False
        sizes[i] = ni + nj
        owner[owner == j] = i
        row_min[j] = np.inf

        stale = active & ((row_arg == i) | (row_arg == j))
        stale[i] = True
        for k in np.flatnonzero(stale):
            row_arg[k] = np.argmin(D[k])
            row_min[k] = D[k, row_arg[k]]
        better = active & ~stale & ((merged < row_min) | ((merged == row_min) & (i < row_arg)))
        row_arg[better] = i
        row_min[better] = merged[better]

    return ClusterAssignment(ids, _canonical_labels(owner), K, tuple(history))


def _confusion(pred: np.ndarray, truth: np.ndarray, K: int) -> np.ndarray:
    C = np.zeros((K, K), dtype=np.int64)
    np.add.at(C, (pred, truth), 1)
    return C


def best_map_exhaustive(C: np.ndarray) -> Tuple[int, ...]:
    """Bijection cluster -> label maximising matches over all K! options."""
    K = C.shape[0]
    best, best_matched = None, -1
    for perm in itertools.permutations(range(K)):
        matched = int(C[np.arange(K), perm].sum())
        if matched > best_matched:
            best, best_matched = perm, matched
    return tuple(int(v) for v in best)


def best_map_assignment(C: np.ndarray) -> Tuple[int, ...]:
    rows, cols = linear_sum_assignment(C, maximize=True)
    mapping = np.empty(C.shape[0], dtype=np.int64)
    mapping[rows] = cols
    return tuple(int(v) for v in mapping)


def misclassification(
    pred: ClusterAssignment,
    labels,
    sample_ids: Optional[Sequence[str]] = None,
    method: str = "auto",
) -> Tuple[float, Tuple[int, ...]]:
    """Lowest error rate over every bijection between clusters and labels.

    The returned map sends cluster index c to the dense label index map[c].
    """
    truth_raw = np.asarray(labels)
    if sample_ids is not None and tuple(sample_ids) != pred.sample_ids:
        if sorted(sample_ids) != sorted(pred.sample_ids):
            raise DomainError("predicted and true labels cover different sample ids")
        position = {sid: k for k, sid in enumerate(sample_ids)}
        truth_raw = truth_raw[[position[sid] for sid in pred.sample_ids]]
    if truth_raw.shape != pred.cluster_index.shape:
        raise DomainError(f"{truth_raw.size} labels for {pred.cluster_index.size} predictions")
    values, truth = np.unique(truth_raw, return_inverse=True)
    if values.size != pred.K:
        raise DomainError(f"clustering has K={pred.K} but the labels have {values.size} distinct values")

    C = _confusion(pred.cluster_index, truth, pred.K)
    if method == "exhaustive" or (method == "auto" and pred.K <= EXHAUSTIVE_MAX_K):
        mapping = best_map_exhaustive(C)
    elif method in ("auto", "assignment"):
        mapping = best_map_assignment(C)
    else:
        raise DomainError(f"unknown method {method!r}")
    matched = int(C[np.arange(pred.K), mapping].sum())
    total = int(C.sum())
    return (total - matched) / total, mapping


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    vectors = vectors.copy()
    for c in range(vectors.shape[1]):
        nonzero = np.flatnonzero(np.abs(vectors[:, c]) > SIGN_TOLERANCE)
        if nonzero.size and vectors[nonzero[0], c] < 0:
            vectors[:, c] = -vectors[:, c]
    return vectors


def pca_fit(points) -> PcaFit:
    X = as_matrix(points, "points")
    if X.shape[0] < 2:
        raise DomainError(f"PCA needs at least 2 points, got {X.shape[0]}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (X.shape[0] - 1)
    eigenvalues, eigenvectors = sym_eigen(0.5 * (cov + cov.T))
    return PcaFit(mean, eigenvalues, _fix_signs(eigenvectors))


def pca_project(points, components: int) -> Tuple[np.ndarray, np.ndarray]:
    """Project onto the top-|eigenvalue| principal axes."""
    X = as_matrix(points, "points")
    if not 1 <= components <= min(X.shape):
        raise DomainError(f"components must lie in 1..{min(X.shape)}, got {components}")
    fit = pca_fit(X)
    return fit.transform(X, components), fit.eigenvalues[:components]


def setcover_subsample(points, m: int) -> list:
    """Farthest-first selection of m representative positions.

    Starts from the point nearest the mean; lowest index wins ties.
    """
    X = as_matrix(points, "points")
    n = X.shape[0]
    if not 0 <= m <= n:
        raise DomainError(f"cannot select m={m} of n={n} points")
    if m == 0:
        return []
    first = int(np.argmin(cdist(X, X.mean(axis=0, keepdims=True))[:, 0]))
    chosen = [first]
    nearest = cdist(X, X[[first]])[:, 0]
    while len(chosen) < m:
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, cdist(X, X[[nxt]])[:, 0])
    return chosen


def centroid_report(z: LatentEmbedding, assignment: ClusterAssignment) -> CentroidReport:
    if tuple(z.sample_ids) != assignment.sample_ids:
        raise DomainError("assignment does not cover the embedded samples")
    centroids = np.zeros((assignment.K, z.vectors.shape[1]))
    for c in range(assignment.K):
        members = assignment.cluster_index == c
        if not members.any():
            raise DomainError(f"cluster {c} is empty")
        centroids[c] = z.vectors[members].mean(axis=0)
    distances = squareform(pdist(centroids)) if assignment.K > 1 else np.zeros((1, 1))
    return CentroidReport(centroids, distances)


def evaluate_embedding(z: LatentEmbedding, labels, K: int, split_tag: str) -> EvalReport:
    assignment = ward_cluster(z.vectors, K, z.sample_ids)
    rate, mapping = misclassification(assignment, labels)
    centroids = centroid_report(z, assignment)
    logging.info(f"Split {split_tag}: misclassification {rate:.4f} over {len(z.sample_ids)} samples")
    return EvalReport(rate, mapping, centroids.centroid_vectors, centroids.centroid_distances, split_tag, assignment)
