import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import KFold, StratifiedKFold, train_test_split

from services.numerics import RngState, make_rng
from utils.errors import DomainError, FormatError, ParseError, StratificationError
from utils.validators import require_count, require_fraction

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
DEFAULT_ID_COLUMN = "sample_id"

# profile -> (n, d, K); biology d is scaled down to desk size
PROFILES = {
    "economics_like": (2000, 9, 4),
    "physics_like": (2500, 33, 2),
    "biology_like": (90, 512, 3),
}


@dataclass(frozen=True)
class Dataset:
    """Indexed tabular samples with optional category labels.

    ``labels`` holds dense category indices 0..K-1; ``label_names`` maps an
    index back to the value found in the source file.
    """

    samples: np.ndarray
    sample_ids: Tuple[str, ...]
    labels: Optional[np.ndarray] = None
    label_names: Optional[Tuple[str, ...]] = None
    feature_kind: Tuple[str, ...] = ()
    feature_names: Tuple[str, ...] = ()
    name: str = "dataset"

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, order="C")
        if samples.ndim != 2:
            raise DomainError(f"samples must be a 2-D array, got shape {samples.shape}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        n, d = samples.shape

        ids = tuple(str(i) for i in self.sample_ids)
        if len(ids) != n:
            raise DomainError(f"{len(ids)} sample ids for {n} samples")
        if len(set(ids)) != n:
            raise DomainError("sample ids must be unique")
        object.__setattr__(self, "sample_ids", ids)

        kinds = tuple(self.feature_kind) or (CONTINUOUS,) * d
        if len(kinds) != d or any(k not in (CONTINUOUS, CATEGORICAL) for k in kinds):
            raise DomainError(f"feature_kind must list {d} entries of {CONTINUOUS!r}/{CATEGORICAL!r}")
        object.__setattr__(self, "feature_kind", kinds)
        names = tuple(self.feature_names) or tuple(f"f{j}" for j in range(d))
        if len(names) != d:
            raise DomainError(f"{len(names)} feature names for {d} features")
        object.__setattr__(self, "feature_names", names)

        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (n,):
                raise DomainError(f"labels must have shape ({n},), got {labels.shape}")
            label_names = self.label_names
            if label_names is None:
                label_names = tuple(str(k) for k in range(int(labels.max()) + 1 if n else 0))
            if len(label_names) < 2:
                raise DomainError("labelled datasets need K >= 2 categories")
            if n and (labels.min() < 0 or labels.max() >= len(label_names)):
                raise DomainError(f"labels must lie in 0..{len(label_names) - 1}")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)
            object.__setattr__(self, "label_names", tuple(label_names))

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    @property
    def n_categories(self) -> int:
        return len(self.label_names) if self.label_names is not None else 0

    @property
    def is_labelled(self) -> bool:
        return self.labels is not None

    def take(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            samples=self.samples[idx],
            sample_ids=tuple(self.sample_ids[i] for i in idx),
            labels=None if self.labels is None else self.labels[idx],
            label_names=self.label_names,
            feature_kind=self.feature_kind,
            feature_names=self.feature_names,
            name=self.name,
        )


@dataclass(frozen=True)
class WindowPlan:
    """Sliding-window decomposition of a sample of ``sample_length`` features.

    Samples shorter than the window are left-padded: ``padding`` zeros sit in
    front of the single window and are excluded from reconstruction.
    """

    window_length: int
    jump: int
    sample_length: int
    windows: Tuple[Tuple[int, int], ...]
    padding: int = 0

    @property
    def count(self) -> int:
        return len(self.windows)

    def coverage(self) -> np.ndarray:
        counts = np.zeros(self.sample_length, dtype=np.int64)
        for start, end in self.windows:
            counts[start:end] += 1
        return counts

    def assembly_matrix(self) -> np.ndarray:
        """Linear map from concatenated window outputs to per-position means.

        Shape is (count * window_length, sample_length).
        """
        a = np.zeros((self.count * self.window_length, self.sample_length))
        for k, (start, end) in enumerate(self.windows):
            for p in range(start, end):
                a[k * self.window_length + self.padding + p - start, p] = 1.0
        counts = a.sum(axis=0)
        if np.any(counts == 0):
            raise DomainError("window plan leaves a position uncovered")
        return a / counts


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "train_test"
    train_fraction: float = 0.8
    fold_count: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("fit_all", "train_test"):
            raise DomainError(f"split mode must be fit_all or train_test, got {self.mode!r}")
        require_fraction("train_fraction", self.train_fraction)
        require_count("fold_count", self.fold_count, minimum=2)


def _label_order(values: List[str]) -> List[str]:
    unique = sorted(set(values))
    try:
        return sorted(unique, key=float)
    except ValueError:
        return unique


def load_csv(
    path,
    label_column: Optional[str] = None,
    id_column: Optional[str] = None,
    categorical_columns: Sequence[str] = (),
) -> Dataset:
    """Read a UTF-8, comma-delimited file with a header row into a Dataset.

    Without an explicit id_column a `sample_id` column, when present, supplies
    the ids; otherwise samples are numbered by row.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise FormatError(f"{path} is empty; a header row is required")
    except pd.errors.ParserError as e:
        raise FormatError(f"{path} has ragged rows: {e}")

    if id_column is None and DEFAULT_ID_COLUMN in frame.columns:
        id_column = DEFAULT_ID_COLUMN

    for column in (label_column, id_column, *categorical_columns):
        if column is not None and column not in frame.columns:
            raise FormatError(f"column {column!r} not found in {path}")

    ragged = frame.isna().any(axis=1)
    if ragged.any():
        row = int(np.flatnonzero(ragged.to_numpy())[0]) + 2
        raise FormatError(f"row {row} of {path} has fewer fields than the header")

    feature_columns = [c for c in frame.columns if c not in (label_column, id_column)]
    if not feature_columns:
        raise FormatError(f"{path} has no feature columns")

    samples = np.empty((len(frame), len(feature_columns)), dtype=np.float64)
    for j, column in enumerate(feature_columns):
        for i, cell in enumerate(frame[column]):
            try:
                value = float(cell)
            except ValueError:
                value = float("nan")
            if not np.isfinite(value):
                raise ParseError(
                    f"row {i + 2}, column {column!r}: cannot parse {cell!r} as a finite real",
                    row=i + 2,
                    column=column,
                )
            samples[i, j] = value

    labels = label_names = None
    if label_column is not None:
        raw = [str(v) for v in frame[label_column]]
        label_names = tuple(_label_order(raw))
        index = {name: k for k, name in enumerate(label_names)}
        labels = np.array([index[v] for v in raw], dtype=np.int64)

    ids = tuple(frame[id_column]) if id_column is not None else tuple(str(i) for i in range(len(frame)))
    kinds = tuple(CATEGORICAL if c in categorical_columns else CONTINUOUS for c in feature_columns)
    logging.info(f"Loaded {len(frame)} samples with {len(feature_columns)} features from {path}")
    return Dataset(
        samples=samples,
        sample_ids=ids,
        labels=labels,
        label_names=label_names,
        feature_kind=kinds,
        feature_names=tuple(feature_columns),
        name=path.stem,
    )


def write_csv(ds: Dataset, path, label_column: str = "label", id_column: str = DEFAULT_ID_COLUMN) -> Path:
    """Write a Dataset so that load_csv reads back bit-identical values."""
    path = Path(path)
    frame = pd.DataFrame({id_column: list(ds.sample_ids)})
    for j, column in enumerate(ds.feature_names):
        frame[column] = [repr(float(v)) for v in ds.samples[:, j]]
    if ds.is_labelled:
        frame[label_column] = [ds.label_names[k] for k in ds.labels]
    frame.to_csv(path, index=False, encoding="utf-8")
    return path


def generate_synthetic(
    profile: str,
    n: Optional[int] = None,
    d: Optional[int] = None,
    K: Optional[int] = None,
    separation: float = 4.0,
    rng: Optional[RngState] = None,
) -> Dataset:
    """K unit-variance Gaussian clusters whose means sit `separation` apart."""
    if profile not in PROFILES:
        raise DomainError(f"unknown synthetic profile {profile!r}; choose from {sorted(PROFILES)}")
    default_n, default_d, default_k = PROFILES[profile]
    n = default_n if n is None else n
    d = default_d if d is None else d
    K = default_k if K is None else K
    require_count("d", d)
    require_count("K", K, minimum=2)
    if n < K:
        raise DomainError(f"need n >= K, got n={n}, K={K}")
    if separation < 0:
        raise DomainError(f"separation must be >= 0, got {separation}")
    rng = rng if rng is not None else make_rng()

    means = np.zeros((K, d))
    if d >= K:
        means[np.arange(K), np.arange(K)] = separation / np.sqrt(2.0)
    else:
        means[:, 0] = separation * np.arange(K)

    labels = rng.permutation(np.arange(n) % K)
    samples = means[labels] + rng.standard_normal((n, d))
    return Dataset(
        samples=samples,
        sample_ids=tuple(f"{profile}-{i:05d}" for i in range(n)),
        labels=labels,
        label_names=tuple(str(k) for k in range(K)),
        name=profile,
    )


def plan_windows(sample_length: int, L: int, jump: int) -> WindowPlan:
    if L < 1 or jump < 1:
        raise DomainError(f"window length and jump must be >= 1, got L={L}, jump={jump}")
    require_count("sample_length", sample_length)
    if sample_length <= L:
        return WindowPlan(L, jump, sample_length, ((0, sample_length),), padding=L - sample_length)

    starts = list(range(0, sample_length - L + 1, jump))
    if starts[-1] + L < sample_length:
        # right-aligned final window keeps coverage total
        starts.append(sample_length - L)
    return WindowPlan(L, jump, sample_length, tuple((s, s + L) for s in starts))


def _check_strata(labels: np.ndarray, n_categories: int, k: int) -> None:
    counts = np.bincount(labels, minlength=n_categories)
    for category, count in enumerate(counts):
        if 0 < count < k:
            raise StratificationError(
                f"category {category} has {count} training samples, fewer than the {k} folds"
            )


def _check_cohort_sizes(n: int, train_fraction: float, n_categories: int) -> None:
    """Each stratified cohort needs room for one sample per category."""
    n_test = int(np.ceil((1.0 - train_fraction) * n))
    n_train = int(np.floor(train_fraction * n))
    for cohort, size in (("test", n_test), ("train", n_train)):
        if size < n_categories:
            raise StratificationError(
                f"{cohort} cohort of {size} samples cannot hold all {n_categories} categories"
            )


def split(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, List[Tuple[np.ndarray, np.ndarray]]]:
    """Train/test split plus k validation folds over the training part.

    Fold indices are positions inside the returned train dataset.
    """
    positions = np.arange(ds.n)
    if spec.mode == "fit_all":
        train_idx, test_idx = positions, positions[:0]
    else:
        stratify = ds.labels if ds.is_labelled else None
        if stratify is not None:
            _check_strata(stratify, ds.n_categories, 2)
            _check_cohort_sizes(ds.n, spec.train_fraction, ds.n_categories)
        train_idx, test_idx = train_test_split(
            positions,
            train_size=spec.train_fraction,
            stratify=stratify,
            random_state=spec.seed,
        )
        train_idx, test_idx = np.sort(train_idx), np.sort(test_idx)

    train, test = ds.take(train_idx), ds.take(test_idx)
    if train.n < spec.fold_count:
        raise DomainError(f"{train.n} training samples cannot form {spec.fold_count} folds")

    if train.is_labelled:
        _check_strata(train.labels, train.n_categories, spec.fold_count)
        splitter = StratifiedKFold(n_splits=spec.fold_count, shuffle=True, random_state=spec.seed)
        raw_folds = splitter.split(np.zeros((train.n, 1)), train.labels)
    else:
        splitter = KFold(n_splits=spec.fold_count, shuffle=True, random_state=spec.seed)
        raw_folds = splitter.split(np.zeros((train.n, 1)))
    folds = [(np.sort(fit), np.sort(val)) for fit, val in raw_folds]

    logging.debug(f"Split {ds.n} samples into {train.n} train / {test.n} test, {len(folds)} folds")
    return train, test, folds
