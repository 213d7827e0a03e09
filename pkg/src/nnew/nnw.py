"""Nearest neighbor weighting.

Every source point gets the number of target points that fall in its
Voronoi cell, i.e. whose nearest source point it is. The cells are never
built explicitly; a 1-NN query per target point realizes them.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from sklearn.utils.validation import check_array

from .base import BaseWeighter, check_source_target

ACCELERATIONS = ("brute", "kd_tree")

# rows-by-sources budget for one block of the brute-force distance matrix
_BLOCK = 1 << 21


def squared_distances(Q, P) -> np.ndarray:
    """Squared Euclidean distances, accumulated one coordinate at a time.

    The fixed accumulation order makes the result for a given (q, p) pair
    independent of which other rows are in ``Q`` or ``P``, so exact ties
    are seen identically by every search path.
    """
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    out = np.zeros((Q.shape[0], P.shape[0]))
    for j in range(Q.shape[1]):
        diff = Q[:, j, None] - P[None, :, j]
        out += diff * diff
    return out


class NeighborIndex:
    """Exact Euclidean 1-NN search over a fixed set of points.

    Distance ties go to the smallest row index. ``"kd_tree"`` returns the
    same indices as ``"brute"``, which is the reference path.
    """

    def __init__(self, points, acceleration: str = "brute"):
        if acceleration not in ACCELERATIONS:
            raise ValueError(f"acceleration must be one of {ACCELERATIONS}, got {acceleration!r}")
        points = check_array(points, dtype=float, ensure_min_samples=1, copy=True)
        points.setflags(write=False)
        self.points = points
        self.acceleration = acceleration
        self._tree = cKDTree(points) if acceleration == "kd_tree" else None

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_features(self) -> int:
        return self.points.shape[1]

    def query(self, Q) -> np.ndarray:
        """Index of the nearest point for each row of ``Q``."""
        Q = np.asarray(Q, dtype=float)
        if Q.ndim == 1:
            Q = Q[:, None] if self.n_features == 1 else Q[None, :]
        if Q.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        if Q.shape[1] != self.n_features:
            raise ValueError(f"index has {self.n_features} features, query has {Q.shape[1]}")
        if not np.all(np.isfinite(Q)):
            raise ValueError("query contains NaN or Inf")
        if self._tree is None:
            return self._query_brute(Q)
        return self._query_tree(Q)

    def _query_brute(self, Q):
        out = np.empty(Q.shape[0], dtype=np.int64)
        step = max(1, _BLOCK // self.n_points)
        for start in range(0, Q.shape[0], step):
            block = Q[start:start + step]
            # argmin returns the first minimum, i.e. the smallest index
            out[start:start + step] = np.argmin(squared_distances(block, self.points), axis=1)
        return out

    def _query_tree(self, Q):
        k = min(2, self.n_points)
        dist, idx = self._tree.query(Q, k=k)
        if k == 1:
            return np.asarray(idx, dtype=np.int64).reshape(-1)
        out = idx[:, 0].astype(np.int64)
        radius = dist[:, 0] * (1 + 1e-9) + 1e-12
        # near-ties are re-resolved with the brute-force distance and tie rule
        ambiguous = np.flatnonzero(dist[:, 1] <= radius)
        for i in ambiguous:
            cand = np.sort(np.asarray(self._tree.query_ball_point(Q[i], radius[i]), dtype=np.int64))
            if cand.size == 0:
                continue
            d2 = squared_distances(Q[i:i + 1], self.points[cand])[0]
            out[i] = cand[np.argmin(d2)]
        return out


def build_index(source, acceleration: str = "brute") -> NeighborIndex:
    """Index over the rows of ``source`` (a :class:`~nnew.data.Dataset` or array)."""
    points = getattr(source, "features", source)
    if np.asarray(points).size == 0:
        raise ValueError("cannot build an index over an empty source set")
    return NeighborIndex(points, acceleration)


def _target_features(index, target):
    X = np.asarray(getattr(target, "features", target), dtype=float)
    if X.size == 0:
        return np.empty((0, index.n_features))
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != index.n_features:
        raise ValueError(f"index has {index.n_features} features, target has {X.shape[1]}")
    return X


def nnew_weights(index: NeighborIndex, target) -> np.ndarray:
    """Raw Voronoi counts: entry i is how many target rows have source point i as nearest."""
    nearest = index.query(_target_features(index, target))
    return np.bincount(nearest, minlength=index.n_points).astype(np.int64)


def nnew_plus_one(index: NeighborIndex, target) -> np.ndarray:
    """Voronoi counts with one pseudo-count added to every cell."""
    return nnew_weights(index, target) + 1


def normalize_mean_one(w) -> np.ndarray:
    """Rescale nonnegative weights so they average to one."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("all weights are zero; cannot normalize")
    return w * (w.size / total)


def write_weights(w, fh) -> None:
    """Single-column ``weight`` CSV in source row order; integer counts stay integers."""
    w = np.asarray(w)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["weight"])
    as_int = np.issubdtype(w.dtype, np.integer)
    for v in w:
        writer.writerow([int(v) if as_int else repr(float(v))])


def save_weights(w, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        write_weights(w, fh)


def load_weights(path) -> np.ndarray:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["weight"]:
        raise ValueError(f"{path}: expected a single 'weight' column")
    return np.array([float(r[0]) for r in rows[1:] if r])


class NearestNeighborWeighting(BaseWeighter):
    """Importance weights from target counts per source Voronoi cell.

    Parameters
    ----------
    plus_one : bool, default=False
        Add one pseudo-count to every cell (Laplace smoothing), which keeps
        every weight strictly positive.
    acceleration : {"brute", "kd_tree"}, default="brute"
    normalize : bool, default=True
        Rescale ``weights_`` to mean one. Raw counts stay in ``counts_``.

    Attributes
    ----------
    counts_ : ndarray of int, shape (n_source,)
    weights_ : ndarray, shape (n_source,)
    index_ : NeighborIndex
    """

    def __init__(self, plus_one=False, acceleration="brute", normalize=True):
        self.plus_one = plus_one
        self.acceleration = acceleration
        self.normalize = normalize

    def fit(self, X_source, X_target):
        X_source, X_target = check_source_target(X_source, X_target)
        self.index_ = NeighborIndex(X_source, self.acceleration)
        counts = nnew_weights(self.index_, X_target)
        if self.plus_one:
            counts = counts + 1
        self.counts_ = counts
        if self.normalize:
            # mean-one is undefined when no target point exists; fall back to raw zeros
            self.weights_ = normalize_mean_one(counts) if counts.sum() > 0 else counts.astype(float)
        else:
            self.weights_ = counts.astype(float)
        return self
