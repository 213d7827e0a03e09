"""Datasets, CSV ingestion, PCA reduction, quadrant-bias sampling and splits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


class EmptyClassError(DataError):
    """A resampling step removed every instance of some class."""


@dataclass(frozen=True)
class Dataset:
    """An N x d feature matrix with optional dense integer labels.

    ``label_names[c]`` is the original label text of class id ``c``.
    """

    features: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""
    label_names: tuple = field(default=(), compare=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"features must be a non-empty 2-D matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain NaN or Inf")
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (X.shape[0],):
                raise DataError(f"labels must have shape ({X.shape[0]},), got {y.shape}")
            if not np.issubdtype(y.dtype, np.integer):
                raise DataError("labels must be integer class ids")
            y = y.astype(np.int64)
            if y.min() < 0 or np.unique(y).size != y.max() + 1:
                raise DataError("labels must cover every class id in 0..C-1")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def subset(self, rows) -> "Dataset":
        """Rows ``rows`` as a new dataset; labels are *not* re-encoded."""
        rows = np.asarray(rows)
        X = self.features[rows]
        if self.labels is None:
            return Dataset(X, None, self.name, self.label_names)
        # bypass the dense-label check: subsets may drop classes
        out = object.__new__(Dataset)
        y = self.labels[rows]
        X = np.array(X)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(out, "features", X)
        object.__setattr__(out, "labels", y)
        object.__setattr__(out, "name", self.name)
        object.__setattr__(out, "label_names", self.label_names)
        if X.shape[0] < 1:
            raise DataError("subset is empty")
        return out

    def with_features(self, features) -> "Dataset":
        out = object.__new__(Dataset)
        X = np.array(features, dtype=float)
        if X.ndim != 2 or X.shape[0] != self.n_samples or not np.all(np.isfinite(X)):
            raise DataError("replacement features must be finite with one row per sample")
        X.setflags(write=False)
        object.__setattr__(out, "features", X)
        object.__setattr__(out, "labels", self.labels)
        object.__setattr__(out, "name", self.name)
        object.__setattr__(out, "label_names", self.label_names)
        return out

    def class_counts(self) -> np.ndarray:
        if self.labels is None:
            raise DataError(f"dataset {self.name!r} has no labels")
        return np.bincount(self.labels, minlength=len(self.label_names) or self.n_classes)


def load_csv(path, label_column: str | None = None, name: str | None = None) -> Dataset:
    """Read a headed, comma-separated numeric file.

    Labels from ``label_column`` are re-encoded to ``0..C-1`` in order of
    first appearance. Any other column must parse as a finite float.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    if label_column is not None and label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not in header {header}")
    label_idx = header.index(label_column) if label_column is not None else None
    feat_idx = [j for j in range(len(header)) if j != label_idx]
    if not feat_idx:
        raise DataError(f"{path}: no feature columns")

    X = np.empty((len(body), len(feat_idx)))
    raw_labels = []
    for i, row in enumerate(body):
        lineno = i + 2
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        for k, j in enumerate(feat_idx):
            cell = row[j].strip()
            try:
                value = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {lineno}, column {header[j]!r}: cannot parse {cell!r} as a number"
                ) from None
            if not math.isfinite(value):
                raise DataError(f"{path}: row {lineno}, column {header[j]!r}: non-finite value {cell!r}")
            X[i, k] = value
        if label_idx is not None:
            raw_labels.append(row[label_idx].strip())

    labels = None
    names: tuple = ()
    if label_idx is not None:
        codes: dict[str, int] = {}
        labels = np.array([codes.setdefault(v, len(codes)) for v in raw_labels], dtype=np.int64)
        names = tuple(codes)
    return Dataset(X, labels, name or path.stem, names)


def save_csv(data: Dataset, path) -> None:
    """Write ``data`` in the same layout :func:`load_csv` reads (label column ``class``)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = [f"x{j + 1}" for j in range(data.n_features)]
        if data.labels is not None:
            header.append("class")
        writer.writerow(header)
        for i in range(data.n_samples):
            row = [repr(float(v)) for v in data.features[i]]
            if data.labels is not None:
                c = int(data.labels[i])
                row.append(data.label_names[c] if c < len(data.label_names) else str(c))
            writer.writerow(row)


class PcaModel(TransformerMixin, BaseEstimator):
    """PCA keeping the fewest components that explain ``retained_fraction`` of the variance.

    Eigendecomposition of the sample covariance (divisor N - 1). Each
    component's largest-magnitude entry is made positive.

    Attributes
    ----------
    mean_ : ndarray of shape (d,)
    components_ : ndarray of shape (d, k)
        Orthonormal principal axes as columns, by descending eigenvalue.
    eigenvalues_ : ndarray of shape (k,)
    total_variance_ : float
    """

    def __init__(self, retained_fraction=0.999):
        self.retained_fraction = retained_fraction

    def fit(self, X, y=None):
        X = check_array(X, dtype=float, ensure_min_samples=2)
        if not 0 < self.retained_fraction <= 1:
            raise ValueError(f"retained_fraction must be in (0, 1], got {self.retained_fraction}")
        mean = X.mean(axis=0)
        cov = np.atleast_2d(np.cov(X - mean, rowvar=False, ddof=1))
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals, kind="stable")[::-1]
        evals = np.clip(evals[order], 0.0, None)
        evecs = evecs[:, order]
        total = evals.sum()
        if total <= 0:
            raise DataError("zero total variance: all rows are identical")
        cumulative = np.cumsum(evals) / total
        # tolerance keeps fraction=1.0 from demanding exact round-off equality
        k = int(np.searchsorted(cumulative, self.retained_fraction - 1e-12) + 1)
        k = min(k, X.shape[1])
        evecs = evecs[:, :k]
        pivot = np.argmax(np.abs(evecs), axis=0)
        signs = np.sign(evecs[pivot, np.arange(k)])
        signs[signs == 0] = 1.0
        self.mean_ = mean
        self.components_ = evecs * signs
        self.eigenvalues_ = evals[:k]
        self.total_variance_ = float(total)
        self.n_components_ = k
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) @ self.components_

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        return np.asarray(Z, dtype=float) @ self.components_.T + self.mean_

    @property
    def explained_fraction_(self) -> float:
        return float(self.eigenvalues_.sum() / self.total_variance_)


def fit_pca(data: Dataset, retained_fraction: float = 0.999) -> PcaModel:
    return PcaModel(retained_fraction).fit(data.features)


def project(model: PcaModel, data: Dataset) -> Dataset:
    Z = model.transform(data.features)
    return Dataset(Z, data.labels, data.name, data.label_names)


def quadrant_mask(features, reduction_factor, rng) -> np.ndarray:
    """Boolean retention mask thinning quadrants I and III of the first two columns.

    Points on an axis belong to no quadrant and are always kept.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise DataError("bias sampling needs at least two feature columns")
    if reduction_factor < 1:
        raise ValueError(f"reduction_factor must be >= 1, got {reduction_factor}")
    a, b = X[:, 0], X[:, 1]
    biased = ((a > 0) & (b > 0)) | ((a < 0) & (b < 0))
    # one draw per row regardless of quadrant keeps masks comparable across factors
    u = rng.random(X.shape[0])
    return ~biased | (u < 1.0 / reduction_factor)


def bias_sample(data: Dataset, reduction_factor: float = 5.0, seed=0) -> Dataset:
    """Covariate-shifted subsample of PCA-projected ``data``.

    Raises :class:`EmptyClassError` if a class loses all its rows.
    """
    keep = quadrant_mask(data.features, reduction_factor, np.random.default_rng(seed))
    if not keep.any():
        raise EmptyClassError("bias sampling removed every row")
    if data.labels is not None:
        before = np.bincount(data.labels, minlength=data.n_classes)
        after = np.bincount(data.labels[keep], minlength=data.n_classes)
        lost = np.flatnonzero((before > 0) & (after == 0))
        if lost.size:
            raise EmptyClassError(f"bias sampling emptied class id(s) {lost.tolist()}")
    return data.subset(np.flatnonzero(keep))


TRAIN_MODES = ("half", "minimal")


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    train_mode: str = "half"
    repetition: int = 0

    def __post_init__(self):
        if self.train_mode not in TRAIN_MODES:
            raise ValueError(f"train_mode must be one of {TRAIN_MODES}, got {self.train_mode!r}")
        if self.repetition < 0:
            raise ValueError("repetition must be >= 0")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng([int(self.seed), int(self.repetition)])


def train_indices(labels, n_features: int, mode: str, rng) -> np.ndarray:
    """Per-class random training rows: half of each class (rounded down) or exactly d + 1."""
    labels = np.asarray(labels)
    chosen = []
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        if mode == "half":
            n = rows.size // 2
        elif mode == "minimal":
            n = n_features + 1
            if rows.size < n:
                raise DataError(
                    f"class {int(c)} has {rows.size} instances; minimal mode needs d + 1 = {n}"
                )
        else:
            raise ValueError(f"unknown train mode {mode!r}")
        chosen.append(rng.choice(rows, size=n, replace=False))
    return np.sort(np.concatenate(chosen))


def holdout_indices(target_features, excluded_features, rng) -> np.ndarray:
    """A random half of the target rows, skipping rows equal to any excluded feature vector."""
    T = np.ascontiguousarray(target_features, dtype=float)
    E = np.ascontiguousarray(excluded_features, dtype=float)
    banned = {row.tobytes() for row in E}
    candidates = np.array([i for i in range(T.shape[0]) if T[i].tobytes() not in banned], dtype=np.int64)
    n = min(T.shape[0] // 2, candidates.size)
    if n == 0:
        raise DataError("no target rows available for the test set")
    return np.sort(rng.choice(candidates, size=n, replace=False))


def make_splits(source: Dataset, target: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Training rows from ``source`` and a disjoint test half of ``target``."""
    if source.labels is None or target.labels is None:
        raise DataError("make_splits needs labeled source and target")
    rng = spec.rng()
    tr = train_indices(source.labels, source.n_features, spec.train_mode, rng)
    train = source.subset(tr)
    te = holdout_indices(target.features, train.features, rng)
    return train, target.subset(te)
