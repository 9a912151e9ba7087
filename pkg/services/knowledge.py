"""Domain-knowledge distance matrix M_T: construction, completion, corruption."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist, pdist

from services.dataset import Dataset
from services.numerics import RngState, uniform
from utils.errors import DomainError, FormatError, TrainingError

DR_MIN_KNOWN_PAIRS = 10
# cap on the (missing x known) distance block held in memory at once
DR_BLOCK_ELEMENTS = 1 << 22

PairMetric = Union[str, Callable[[np.ndarray, np.ndarray], float]]


@dataclass(frozen=True)
class KnowledgeMatrix:
    """Symmetric n x n matrix of relative distances with a known/missing mask.

    Missing entries are stored as 0.0 and must never be read without the mask.
    """

    entries: np.ndarray
    known_mask: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64)
        known = np.array(self.known_mask, dtype=bool)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or known.shape != entries.shape:
            raise DomainError(f"knowledge matrix must be square with a matching mask, got {entries.shape} / {known.shape}")
        if not np.array_equal(known, known.T):
            raise DomainError("known_mask must be symmetric")
        if not np.all(np.diag(known)):
            raise DomainError("the diagonal must be known")
        values = entries[known]
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DomainError("known entries must be finite and >= 0")
        if not np.array_equal(entries[known], entries.T[known]):
            raise DomainError("known entries must be symmetric")
        if np.any(np.diag(entries) != 0):
            raise DomainError("the diagonal must be zero")
        entries[~known] = 0.0
        entries.setflags(write=False)
        known.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "known_mask", known)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def is_complete(self) -> bool:
        return bool(np.all(self.known_mask))

    def known_pair_count(self) -> int:
        """Known off-diagonal unordered pairs."""
        return int(np.triu(self.known_mask, k=1).sum())

    @classmethod
    def unknown(cls, n: int) -> "KnowledgeMatrix":
        return cls(np.zeros((n, n)), np.eye(n, dtype=bool))

    @classmethod
    def from_upper(cls, n: int, values: np.ndarray, known: Optional[np.ndarray] = None) -> "KnowledgeMatrix":
        """Build from row-major upper-triangle values (i < j)."""
        rows, cols = np.triu_indices(n, k=1)
        entries = np.zeros((n, n))
        entries[rows, cols] = values
        entries[cols, rows] = values
        mask = np.eye(n, dtype=bool)
        upper_known = np.ones(rows.size, dtype=bool) if known is None else np.asarray(known, dtype=bool)
        mask[rows, cols] = upper_known
        mask[cols, rows] = upper_known
        return cls(entries, mask)


@dataclass(frozen=True)
class GammaTable:
    """Bounds for label-derived knowledge.

    Same-category pairs draw from [alpha1, alpha2); a cross-category pair
    (x, y) draws from [gamma[x, y], gamma[x, y] + 1).
    """

    alpha1: float
    alpha2: float
    gamma: np.ndarray

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=np.float64)
        if not self.alpha1 < self.alpha2:
            raise DomainError(f"need alpha1 < alpha2, got {self.alpha1} and {self.alpha2}")
        if gamma.ndim != 2 or gamma.shape[0] != gamma.shape[1]:
            raise DomainError(f"gamma must be a K x K table, got shape {gamma.shape}")
        if not np.array_equal(gamma, gamma.T):
            raise DomainError("gamma must be symmetric")
        off = ~np.eye(gamma.shape[0], dtype=bool)
        # gamma equal to alpha2 is the published default (touching intervals)
        if np.any(gamma[off] < self.alpha2):
            raise DomainError(f"cross-category gamma must not be below alpha2={self.alpha2}")
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)

    @property
    def K(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def uniform(cls, K: int, gamma: float = 1.0, alpha1: float = 0.0, alpha2: float = 1.0) -> "GammaTable":
        table = np.full((K, K), float(gamma))
        np.fill_diagonal(table, 0.0)
        return cls(alpha1, alpha2, table)

    @classmethod
    def from_pairs(
        cls, K: int, pairs: Dict[Tuple[int, int], float], default: float = 1.0,
        alpha1: float = 0.0, alpha2: float = 1.0,
    ) -> "GammaTable":
        table = np.full((K, K), float(default))
        np.fill_diagonal(table, 0.0)
        for (x, y), value in pairs.items():
            if not (0 <= x < K and 0 <= y < K) or x == y:
                raise DomainError(f"gamma pair ({x}, {y}) is not a cross-category pair for K={K}")
            table[x, y] = table[y, x] = float(value)
        return cls(alpha1, alpha2, table)


@dataclass(frozen=True)
class PairMetricSet:
    """Named pair metrics g_k(m_i, m_j); strings are scipy distance names."""

    metrics: Tuple[Tuple[str, PairMetric], ...] = field(
        default_factory=lambda: (("euclidean", "euclidean"), ("manhattan", "cityblock"), ("cosine", "cosine"))
    )

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.metrics)

    def pair_features(self, samples: np.ndarray) -> np.ndarray:
        """phi(i, j) for every unordered pair, row-major upper-triangle order."""
        columns = []
        for name, metric in self.metrics:
            with np.errstate(invalid="ignore", divide="ignore"):
                values = pdist(samples, metric=metric)
            # cosine is undefined for zero vectors
            columns.append(np.nan_to_num(values, nan=0.0, posinf=0.0, neginf=0.0))
        return np.column_stack(columns) if columns else np.zeros((0, 0))


def build_from_labels(ds: Dataset, g: GammaTable, rng: RngState) -> KnowledgeMatrix:
    if not ds.is_labelled:
        raise DomainError("build_from_labels needs a labelled dataset")
    if ds.n_categories > g.K:
        raise DomainError(f"gamma table covers {g.K} categories, dataset has {ds.n_categories}")

    rows, cols = np.triu_indices(ds.n, k=1)
    x, y = ds.labels[rows], ds.labels[cols]
    same = x == y
    lo = np.where(same, g.alpha1, g.gamma[x, y])
    hi = np.where(same, g.alpha2, g.gamma[x, y] + 1.0)
    draws = uniform(rng, 0.0, 1.0, rows.size)
    logging.info(f"Built knowledge matrix for {ds.n} samples from {ds.n_categories} categories")
    return KnowledgeMatrix.from_upper(ds.n, lo + (hi - lo) * draws)


def _nearest_mask(distances: np.ndarray, k: int) -> np.ndarray:
    """Row-wise 0/1 mask of the k smallest distances; ties go to the lower column."""
    k = min(k, distances.shape[1])
    kth = np.partition(distances, k - 1, axis=1)[:, k - 1:k]
    below = distances < kth
    need = k - below.sum(axis=1, keepdims=True)
    at = distances == kth
    chosen = below | (at & (np.cumsum(at, axis=1) <= need))
    return chosen.astype(np.float64)


def fill_missing_dr(
    mt: KnowledgeMatrix,
    ds: Dataset,
    metrics: Optional[PairMetricSet] = None,
    k_neighbors: int = 5,
) -> KnowledgeMatrix:
    """Complete M_T with a k-nearest-neighbour regressor over pair-metric features.

    Known entries are returned unchanged. Neighbour ties go to the lower
    pair index.
    """
    if mt.n != ds.n:
        raise DomainError(f"knowledge matrix is {mt.n}x{mt.n} but the dataset has {ds.n} samples")
    if k_neighbors < 1:
        raise DomainError(f"k_neighbors must be >= 1, got {k_neighbors}")
    if mt.is_complete:
        return mt

    minimum = max(k_neighbors, DR_MIN_KNOWN_PAIRS)
    rows, cols = np.triu_indices(mt.n, k=1)
    known = mt.known_mask[rows, cols]
    if known.sum() < minimum:
        raise TrainingError(
            f"distance regressor needs at least {minimum} known pairs, got {int(known.sum())}"
        )

    metrics = metrics or PairMetricSet()
    phi = metrics.pair_features(ds.samples)
    targets = mt.entries[rows, cols]
    phi_known, y_known = phi[known], targets[known]

    phi_missing = phi[~known]
    predictions = np.empty(phi_missing.shape[0])
    block = max(1, DR_BLOCK_ELEMENTS // phi_known.shape[0])
    for start in range(0, phi_missing.shape[0], block):
        stop = start + block
        chosen = _nearest_mask(cdist(phi_missing[start:stop], phi_known), k_neighbors)
        predictions[start:stop] = (chosen @ y_known) / k_neighbors

    values = targets.copy()
    values[~known] = predictions
    logging.info(f"Distance regressor filled {int((~known).sum())} missing pairs (k={k_neighbors})")
    filled = KnowledgeMatrix.from_upper(mt.n, values)
    # keep the caller's known entries bit-identical
    entries = np.where(mt.known_mask, mt.entries, filled.entries)
    return KnowledgeMatrix(entries, np.ones_like(mt.known_mask))


def corrupt_noisy(n: int, rng: RngState) -> KnowledgeMatrix:
    """Faulty knowledge: every off-diagonal pair ~ Uniform[0, 1)."""
    if n < 2:
        raise DomainError(f"noisy knowledge needs n >= 2, got {n}")
    return KnowledgeMatrix.from_upper(n, uniform(rng, 0.0, 1.0, n * (n - 1) // 2))


def subset(mt: KnowledgeMatrix, indices: Sequence[int]) -> KnowledgeMatrix:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise DomainError("indices must be a flat list")
    if idx.size and (idx.min() < 0 or idx.max() >= mt.n):
        raise DomainError(f"index out of range for a {mt.n}x{mt.n} knowledge matrix")
    if np.unique(idx).size != idx.size:
        raise DomainError("indices must be distinct")
    grid = np.ix_(idx, idx)
    return KnowledgeMatrix(mt.entries[grid], mt.known_mask[grid])


def mask_random_pairs(mt: KnowledgeMatrix, known_fraction: float, rng: RngState) -> KnowledgeMatrix:
    """Hide pairs so that roughly `known_fraction` of unordered pairs stay known."""
    if not 0.0 <= known_fraction <= 1.0:
        raise DomainError(f"known_fraction must lie in [0, 1], got {known_fraction}")
    rows, cols = np.triu_indices(mt.n, k=1)
    keep = mt.known_mask[rows, cols] & (uniform(rng, 0.0, 1.0, rows.size) < known_fraction)
    return KnowledgeMatrix.from_upper(mt.n, mt.entries[rows, cols], keep)


def audit_triangle(mt: KnowledgeMatrix, tolerance: float = 1e-12) -> int:
    """Count fully known triples that violate the triangle inequality.

    Expert input is audited only; violations are logged, never repaired.
    """
    m, known = mt.entries, mt.known_mask
    violations = 0
    for j in range(mt.n):
        # m[i, k] > m[i, j] + m[j, k] over triples with all three pairs known
        via = m[:, j][:, None] + m[j, :][None, :]
        mask = known & known[:, j][:, None] & known[j, :][None, :]
        violations += int(np.triu(mask & (m > via + tolerance), k=1).sum())
    if violations:
        logging.warning(f"Knowledge matrix has {violations} triangle-inequality violations (left as given)")
    return violations


def load_knowledge_csv(path) -> KnowledgeMatrix:
    """n x n headerless CSV; an empty cell marks a missing entry."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"knowledge file not found: {path}")
    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise FormatError(f"cannot read knowledge matrix {path}: {e}")
    if frame.shape[0] != frame.shape[1]:
        raise FormatError(f"knowledge matrix {path} is {frame.shape[0]}x{frame.shape[1]}, expected square")

    n = frame.shape[0]
    entries = np.zeros((n, n))
    known = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            cell = frame.iat[i, j]
            if isinstance(cell, float) or str(cell).strip() == "":
                continue
            try:
                entries[i, j] = float(cell)
            except ValueError:
                raise FormatError(f"knowledge matrix {path}: cell ({i + 1}, {j + 1}) is not a number: {cell!r}")
            known[i, j] = True
    np.fill_diagonal(known, True)
    if np.any(np.diag(entries) != 0):
        raise FormatError(f"knowledge matrix {path} must have a zero diagonal")
    if not np.array_equal(known, known.T) or not np.array_equal(entries[known], entries.T[known]):
        raise FormatError(f"knowledge matrix {path} is not symmetric")
    try:
        return KnowledgeMatrix(entries, known)
    except DomainError as e:
        raise FormatError(f"knowledge matrix {path}: {e}")


def write_knowledge_csv(mt: KnowledgeMatrix, path) -> Path:
    path = Path(path)
    cells = [
        [repr(float(mt.entries[i, j])) if mt.known_mask[i, j] else "" for j in range(mt.n)]
        for i in range(mt.n)
    ]
    pd.DataFrame(cells).to_csv(path, header=False, index=False, encoding="utf-8")
    return path
