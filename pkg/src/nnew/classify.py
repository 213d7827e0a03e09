"""Sample-weighted linear and quadratic discriminant analysis."""
from __future__ import annotations

import json

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .base import EstimationError


class SingularCovarianceError(EstimationError):
    """A (weighted) covariance estimate is not positive definite."""


def _cholesky(S, what):
    S = 0.5 * (S + S.T)
    evals = np.linalg.eigvalsh(S)
    # numerical-rank test: exact rank deficiency rarely makes Cholesky fail in floating point
    if not np.all(np.isfinite(evals)) or evals[0] <= S.shape[0] * np.finfo(float).eps * max(evals[-1], 0.0):
        raise SingularCovarianceError(f"{what} covariance is singular (smallest eigenvalue {evals[0]:.3g})")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError(f"{what} covariance is not positive definite") from None
    return S, L


class WeightedDiscriminant(ClassifierMixin, BaseEstimator):
    """Gaussian plug-in classifier whose moments are weighted averages.

    For class c with total weight W_c: prior W_c / sum(W), mean
    sum(w x) / W_c, covariance sum(w (x - mean)(x - mean)^T) / W_c. No
    regularization is applied; a singular covariance raises
    :class:`SingularCovarianceError`.

    Parameters
    ----------
    kind : {"lda", "qda"}
        "lda" shares the weight-pooled covariance across classes.

    Attributes
    ----------
    classes_ : ndarray of shape (C,)
    priors_ : ndarray of shape (C,)
    means_ : ndarray of shape (C, d)
    covariances_ : ndarray of shape (C, d, d)
        Identical slices for LDA.
    log_dets_ : ndarray of shape (C,)
    """

    def __init__(self, kind="lda"):
        self.kind = kind

    def fit(self, X, y, sample_weight=None):
        if self.kind not in ("lda", "qda"):
            raise ValueError(f"kind must be 'lda' or 'qda', got {self.kind!r}")
        X, y = check_X_y(X, y, dtype=float)
        if sample_weight is None:
            w = np.ones(X.shape[0])
        else:
            w = np.asarray(sample_weight, dtype=float)
            if w.shape != (X.shape[0],):
                raise ValueError(f"sample_weight must have shape ({X.shape[0]},), got {w.shape}")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("sample_weight must be finite and nonnegative")

        classes = np.unique(y)
        d = X.shape[1]
        totals = np.empty(classes.size)
        means = np.empty((classes.size, d))
        covs = np.empty((classes.size, d, d))
        for k, c in enumerate(classes):
            mask = y == c
            wc, Xc = w[mask], X[mask]
            W = wc.sum()
            if not W > 0:
                raise EstimationError(f"class {c!r} has zero total weight")
            mu = wc @ Xc / W
            R = Xc - mu
            totals[k] = W
            means[k] = mu
            covs[k] = (R * wc[:, None]).T @ R / W

        if self.kind == "lda":
            pooled = np.tensordot(totals, covs, axes=1) / totals.sum()
            pooled, L = _cholesky(pooled, "pooled")
            covs[:] = pooled
            chols = np.broadcast_to(L, covs.shape).copy()
        else:
            chols = np.empty_like(covs)
            for k, c in enumerate(classes):
                covs[k], chols[k] = _cholesky(covs[k], f"class {c!r}")

        self.classes_ = classes
        self.priors_ = totals / totals.sum()
        self.means_ = means
        self.covariances_ = covs
        self.cholesky_ = chols
        self.log_dets_ = 2.0 * np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        """Per-class log prior - 1/2 log|S_c| - 1/2 squared Mahalanobis distance."""
        check_is_fitted(self, "means_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        scores = np.empty((X.shape[0], self.classes_.size))
        for k in range(self.classes_.size):
            Z = solve_triangular(self.cholesky_[k], (X - self.means_[k]).T, lower=True)
            scores[:, k] = np.log(self.priors_[k]) - 0.5 * self.log_dets_[k] - 0.5 * np.sum(Z * Z, axis=0)
        return scores

    def predict(self, X):
        # argmax takes the first maximum: ties go to the smallest class
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def error_rate(self, X, y) -> float:
        y = np.asarray(y)
        if y.size == 0:
            raise ValueError("cannot compute an error rate on an empty test set")
        return float(np.mean(self.predict(X) != y))

    def to_json(self) -> str:
        check_is_fitted(self, "means_")
        return json.dumps({
            "kind": self.kind,
            "classes": self.classes_.tolist(),
            "priors": self.priors_.tolist(),
            "means": self.means_.tolist(),
            "covariances": (self.covariances_[:1] if self.kind == "lda" else self.covariances_).tolist(),
        })


class WeightedLDA(WeightedDiscriminant):
    def __init__(self):
        super().__init__(kind="lda")


class WeightedQDA(WeightedDiscriminant):
    def __init__(self):
        super().__init__(kind="qda")


def fit_weighted(kind, train, weights=None) -> WeightedDiscriminant:
    """Fit a weighted discriminant of ``kind`` ("lda" or "qda") on a labeled dataset."""
    if train.labels is None:
        raise ValueError("training data must be labeled")
    return WeightedDiscriminant(kind.lower()).fit(train.features, train.labels, sample_weight=weights)


def predict(model: WeightedDiscriminant, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return model.predict(x[None, :])[0]
    return model.predict(x)


def error_rate(model: WeightedDiscriminant, test) -> float:
    if test.labels is None:
        raise ValueError("test data must be labeled")
    return model.error_rate(test.features, test.labels)
