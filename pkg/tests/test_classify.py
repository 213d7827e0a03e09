import json

import numpy as np
import pytest
from sklearn.base import clone

from nnew.base import EstimationError
from nnew.classify import (
    SingularCovarianceError,
    WeightedDiscriminant,
    WeightedLDA,
    WeightedQDA,
    error_rate,
    fit_weighted,
    predict,
)
from nnew.data import Dataset


def blobs(n_per_class=30, d=2, n_classes=3, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 3, (n_classes, d))
    X = np.vstack([c + rng.normal(size=(n_per_class, d)) * rng.uniform(0.5, 1.5, d) for c in centers])
    y = np.repeat(np.arange(n_classes), n_per_class)
    return X, y


def test_uniform_weights_reduce_to_classical_moments():
    X, y = blobs(n_per_class=25, d=3)
    qda = WeightedQDA().fit(X, y)
    lda = WeightedLDA().fit(X, y)
    pooled = np.zeros((3, 3))
    for c in range(3):
        Xc = X[y == c]
        np.testing.assert_allclose(qda.means_[c], Xc.mean(axis=0), rtol=0, atol=1e-12)
        cov = np.cov(Xc, rowvar=False, bias=True)
        np.testing.assert_allclose(qda.covariances_[c], cov, rtol=0, atol=1e-12)
        pooled += len(Xc) * cov
    np.testing.assert_allclose(lda.covariances_[0], pooled / len(X), rtol=0, atol=1e-12)
    np.testing.assert_allclose(qda.priors_, [1 / 3] * 3, atol=1e-15)


def test_duplicate_and_halve_weight():
    X, y = blobs(seed=1)
    w = np.random.default_rng(1).uniform(0.2, 2, len(y))
    for kind in ("lda", "qda"):
        a = WeightedDiscriminant(kind).fit(X, y, sample_weight=w)
        X2 = np.vstack([X, X[:5]])
        y2 = np.concatenate([y, y[:5]])
        w2 = np.concatenate([w, w[:5]])
        w2[:5] /= 2
        w2[-5:] /= 2
        b = WeightedDiscriminant(kind).fit(X2, y2, sample_weight=w2)
        for attr in ("priors_", "means_", "covariances_"):
            np.testing.assert_allclose(getattr(a, attr), getattr(b, attr), rtol=0, atol=1e-10)


def test_hand_computed_weighted_moments():
    X = np.array([[0.0], [1.0], [2.0], [4.0], [5.0], [6.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    w = np.array([1, 2, 1, 1, 1, 2.0])
    qda = WeightedQDA().fit(X, y, sample_weight=w)
    # class 0: mean (0 + 2 + 2) / 4 = 1, var (1 + 0 + 1) / 4 = 0.5
    # class 1: mean (4 + 5 + 12) / 4 = 5.25, var (1.5625 + 0.0625 + 2 * 0.5625) / 4 = 0.6875
    np.testing.assert_allclose(qda.means_[:, 0], [1.0, 5.25], atol=1e-15)
    np.testing.assert_allclose(qda.covariances_[:, 0, 0], [0.5, 0.6875], atol=1e-15)
    np.testing.assert_allclose(qda.priors_, [0.5, 0.5])
    lda = WeightedLDA().fit(X, y, sample_weight=w)
    np.testing.assert_allclose(lda.covariances_[0, 0, 0], (4 * 0.5 + 4 * 0.6875) / 8, atol=1e-15)


def test_scale_invariance():
    X, y = blobs(seed=2)
    w = np.random.default_rng(2).uniform(0.1, 3, len(y))
    for kind in ("lda", "qda"):
        a = WeightedDiscriminant(kind).fit(X, y, sample_weight=w)
        b = WeightedDiscriminant(kind).fit(X, y, sample_weight=w * 1234.5)
        for attr in ("priors_", "means_", "covariances_"):
            np.testing.assert_allclose(getattr(a, attr), getattr(b, attr), rtol=1e-10, atol=1e-10)


def test_symmetric_lda_boundary():
    X = np.array([[-2.0], [-1.0], [0.0], [0.0], [1.0], [2.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    lda = WeightedLDA().fit(X, y)
    assert lda.means_[:, 0].tolist() == [-1.0, 1.0]
    assert predict(lda, [0.1]) == 1
    assert predict(lda, [-0.1]) == 0
    # exact tie on the boundary goes to the smaller class id
    assert predict(lda, [0.0]) == 0


def test_prior_shift_moves_boundary():
    X = np.array([[-2.0], [-1.0], [0.0], [0.0], [1.0], [2.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    grid = np.linspace(-0.5, 1.5, 201)[:, None]
    previous = -1
    for p0 in (1, 2, 5, 20, 100):
        w = np.where(y == 0, float(p0), 1.0)
        n0 = int(np.sum(WeightedLDA().fit(X, y, sample_weight=w).predict(grid) == 0))
        assert n0 >= previous
        previous = n0
    assert previous > 100


def test_scores_match_dense_algebra():
    X, y = blobs(seed=3)
    w = np.random.default_rng(3).uniform(0.5, 1.5, len(y))
    Q = np.random.default_rng(4).normal(0, 3, (50, 2))
    for kind in ("lda", "qda"):
        m = WeightedDiscriminant(kind).fit(X, y, sample_weight=w)
        expected = np.empty((len(Q), 3))
        for c in range(3):
            S = m.covariances_[c]
            Si = np.linalg.inv(S)
            diff = Q - m.means_[c]
            maha = np.einsum("ij,jk,ik->i", diff, Si, diff)
            expected[:, c] = np.log(m.priors_[c]) - 0.5 * np.log(np.linalg.det(S)) - 0.5 * maha
        np.testing.assert_allclose(m.decision_function(Q), expected, rtol=1e-9, atol=1e-9)
        assert m.predict(Q).tolist() == np.argmax(expected, axis=1).tolist()


def test_lda_scores_are_affine_in_x():
    X, y = blobs(seed=5)
    lda = WeightedLDA().fit(X, y)
    rng = np.random.default_rng(5)
    for _ in range(10):
        x, u, v = rng.normal(0, 3, (3, 2))
        f = lambda p: lda.decision_function(p[None, :])[0, 0] - lda.decision_function(p[None, :])[0, 1]
        # second difference of an affine function vanishes
        assert abs(f(x + u + v) - f(x + u) - f(x + v) + f(x)) < 1e-9


def test_general_position_detection():
    d = 3
    rng = np.random.default_rng(6)
    X = rng.normal(size=(2 * (d + 1) + 6, d))
    y = np.array([0] * (d + 1) + [1] * (d + 1) + [0, 1] * 3)
    w = np.r_[np.ones(2 * (d + 1)), np.zeros(6)]
    WeightedQDA().fit(X, y, sample_weight=w)
    # put class 0's weighted points on a plane: no longer general position
    X_flat = X.copy()
    X_flat[: d + 1, 2] = 0.5
    with pytest.raises(SingularCovarianceError):
        WeightedQDA().fit(X_flat, y, sample_weight=w)


def test_zero_class_weight_fails():
    X, y = blobs(seed=7)
    w = np.where(y == 2, 0.0, 1.0)
    with pytest.raises(EstimationError, match="zero total weight"):
        WeightedLDA().fit(X, y, sample_weight=w)


def test_error_rate_extremes_and_recount():
    X = np.array([[0.0], [0.5], [1.0], [3.0], [4.0], [5.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    # class 1 almost weightless: prior ~1e-200 makes class 0 win everywhere nearby
    m = WeightedQDA().fit(X, y, sample_weight=np.where(y == 1, 1e-200, 1.0))
    near = Dataset(np.linspace(-1, 6, 20)[:, None], np.zeros(20, dtype=int))
    assert error_rate(m, near) == 0.0
    assert m.error_rate(near.features, np.ones(20, dtype=int)) == 1.0

    X2, y2 = blobs(seed=8)
    m2 = WeightedLDA().fit(X2, y2)
    Xt, yt = blobs(seed=9)
    pred = m2.predict(Xt)
    wrong = sum(1 for p, t in zip(pred, yt) if p != t)
    assert m2.error_rate(Xt, yt) == wrong / len(yt)
    with pytest.raises(ValueError):
        m2.error_rate(np.empty((0, 2)), np.empty(0))


def test_uniform_fit_beats_prior_only_on_separable_data():
    for seed in range(5):
        X, y = blobs(seed=seed)
        err = WeightedLDA().fit(X, y).error_rate(X, y)
        prior_only = 1 - np.bincount(y).max() / len(y)
        assert err <= prior_only


def test_nonfinite_query_rejected():
    m = WeightedLDA().fit(*blobs())
    with pytest.raises(ValueError):
        m.predict(np.array([[np.nan, 0.0]]))


def test_json_and_sklearn_compat():
    X, y = blobs()
    m = fit_weighted("QDA", Dataset(X, y), np.ones(len(y)))
    doc = json.loads(m.to_json())
    assert doc["kind"] == "qda" and len(doc["covariances"]) == 3
    assert len(json.loads(WeightedLDA().fit(X, y).to_json())["covariances"]) == 1
    assert clone(WeightedDiscriminant("qda")).get_params() == {"kind": "qda"}
    assert clone(WeightedLDA()).fit(X, y).score(X, y) > 0.5
