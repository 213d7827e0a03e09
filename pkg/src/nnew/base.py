"""Shared exceptions and the importance-weighter base class."""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array


class EstimationError(RuntimeError):
    """A weight estimator or weighted classifier could not produce a valid result.

    Harness code catches this and records the cell as failed rather than aborting.
    """


class StarvationWarning(UserWarning):
    """Too few source points kept a strictly positive weight."""


def check_source_target(X_source, X_target, *, min_source=1, min_target=0):
    X_source = check_array(X_source, dtype=float, ensure_min_samples=min_source)
    if min_target == 0 and np.asarray(X_target).size == 0:
        X_target = np.empty((0, X_source.shape[1]))
    else:
        X_target = check_array(X_target, dtype=float, ensure_min_samples=max(min_target, 1))
    if X_target.shape[1] != X_source.shape[1]:
        raise ValueError(
            f"source has {X_source.shape[1]} features but target has {X_target.shape[1]}"
        )
    return X_source, X_target


class BaseWeighter(BaseEstimator):
    """Estimators that assign an importance weight to every source sample.

    Subclasses implement ``fit(X_source, X_target)`` and set ``weights_``.
    """

    def fit_weights(self, X_source, X_target):
        return self.fit(X_source, X_target).weights_


class UniformWeighting(BaseWeighter):
    """All source weights equal to one; the no-adaptation reference."""

    def fit(self, X_source, X_target=None):
        X_source = check_array(X_source, dtype=float)
        self.weights_ = np.ones(X_source.shape[0])
        return self
