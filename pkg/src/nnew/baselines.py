"""Kernel-based importance weight estimators: Parzen ratio, KLIEP and uLSIF."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import logsumexp
from sklearn.utils import check_random_state

from .base import BaseWeighter, EstimationError, StarvationWarning, check_source_target

SIGMA_MULTIPLIERS = (1 / 8, 1 / 4, 1 / 2, 1, 2, 4)
LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)


def gaussian_kernel(X, centers, sigma) -> np.ndarray:
    """exp(-||x - c||^2 / (2 sigma^2)) for every row of ``X`` against every center."""
    return np.exp(-cdist(X, centers, "sqeuclidean") / (2.0 * sigma * sigma))


def median_distance(X_source, X_target, random_state=None, max_points=1000) -> float:
    """Median pairwise Euclidean distance over the pooled samples."""
    pooled = np.vstack([X_source, X_target])
    if pooled.shape[0] > max_points:
        rng = check_random_state(random_state)
        pooled = pooled[rng.choice(pooled.shape[0], max_points, replace=False)]
    d = pdist(pooled)
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def default_sigma_grid(X_source, X_target, random_state=None) -> list[float]:
    med = median_distance(X_source, X_target, random_state)
    return [med * m for m in SIGMA_MULTIPLIERS]


@dataclass
class KernelModel:
    """Weight function sum_l alpha_l * k_sigma(x, c_l) over target-sample centers."""

    centers: np.ndarray
    sigma: float
    alpha: np.ndarray

    def __call__(self, X) -> np.ndarray:
        return gaussian_kernel(np.asarray(X, dtype=float), self.centers, self.sigma) @ self.alpha


@dataclass
class CvReport:
    """Cross-validation scores over a (sigma, lambda) grid.

    ``lam`` is None for estimators without a regularizer.
    """

    grid: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    chosen: int = -1

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sigma", "lambda", "score", "chosen"])
            for i, ((sigma, lam), score) in enumerate(zip(self.grid, self.scores)):
                writer.writerow([repr(sigma), "" if lam is None else repr(lam), repr(score), int(i == self.chosen)])


def _select_centers(X_target, n_centers, rng):
    b = min(n_centers, X_target.shape[0])
    return X_target[np.sort(rng.choice(X_target.shape[0], b, replace=False))]


def _fold_ids(n, n_folds, rng):
    return rng.permutation(np.arange(n) % n_folds)


# -- Parzen ------------------------------------------------------------------


def silverman_bandwidth(X) -> float:
    """Spherical rule-of-thumb bandwidth (4 / (n (d + 2)))^(1 / (d + 4)) * sigma_bar."""
    n, d = X.shape
    if n < 2:
        raise ValueError("Silverman's rule needs at least two samples")
    spread = math.sqrt(np.var(X, axis=0, ddof=1).mean())
    if spread == 0:
        raise EstimationError("zero sample variance; Silverman bandwidth is zero")
    return (4.0 / (n * (d + 2))) ** (1.0 / (d + 4)) * spread


def gaussian_log_density(X, samples, bandwidth) -> np.ndarray:
    n, d = samples.shape
    sq = cdist(X, samples, "sqeuclidean")
    return (logsumexp(-sq / (2 * bandwidth ** 2), axis=1) - math.log(n)
            - 0.5 * d * math.log(2 * math.pi * bandwidth ** 2))


class ParzenRatio(BaseWeighter):
    """Ratio of two separately fitted spherical Gaussian kernel density estimates.

    Parameters
    ----------
    bandwidth : "silverman" or float or (float, float), default="silverman"
        A pair sets the (source, target) bandwidths separately.
    """

    def __init__(self, bandwidth="silverman"):
        self.bandwidth = bandwidth

    def _bandwidths(self, X_source, X_target):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "silverman":
                raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")
            return silverman_bandwidth(X_source), silverman_bandwidth(X_target)
        hs, ht = np.broadcast_to(np.asarray(self.bandwidth, dtype=float), (2,))
        if hs <= 0 or ht <= 0:
            raise ValueError("bandwidths must be positive")
        return float(hs), float(ht)

    def fit(self, X_source, X_target):
        min_n = 2 if isinstance(self.bandwidth, str) else 1
        X_source, X_target = check_source_target(X_source, X_target, min_source=min_n, min_target=min_n)
        hs, ht = self._bandwidths(X_source, X_target)
        log_ratio = gaussian_log_density(X_source, X_target, ht) - gaussian_log_density(X_source, X_source, hs)
        # normalize in the log domain so far-off targets cannot underflow every weight
        w = np.exp(log_ratio - log_ratio.max())
        self.bandwidths_ = (hs, ht)
        self.log_ratio_ = log_ratio
        self.weights_ = w * (w.size / w.sum())
        return self


def parzen_ratio(source, target, bandwidth_rule="silverman") -> np.ndarray:
    return ParzenRatio(bandwidth_rule).fit_weights(getattr(source, "features", source),
                                                   getattr(target, "features", target))


# -- KLIEP -------------------------------------------------------------------


def _kliep_objective(A, alpha):
    v = A @ alpha
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        return -np.inf
    return float(np.mean(np.log(v)))


def _kliep_project(alpha, b):
    """Back onto {alpha >= 0, b.alpha = 1}: shift along b, clip, rescale."""
    alpha = alpha + (1.0 - b @ alpha) * b / (b @ b)
    alpha = np.maximum(alpha, 0.0)
    s = b @ alpha
    if not s > 0:
        return None
    return alpha / s


def kliep_solve(A, b, max_iter=500, tol=1e-7):
    """Maximize mean(log(A alpha)) subject to alpha >= 0 and b.alpha = 1.

    Projected gradient ascent with backtracking. A step is accepted only if
    the objective does not decrease, so the returned history is monotone.

    Returns
    -------
    alpha, history, converged
    """
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(b)) or not b @ b > 0:
        raise EstimationError("KLIEP: kernel values at the source points vanish or are non-finite")
    alpha = _kliep_project(np.ones(A.shape[1]), b)
    f = _kliep_objective(A, alpha)
    if not np.isfinite(f):
        raise EstimationError("KLIEP: initial objective is not finite")
    history = [f]
    step = 1.0
    converged = False
    for _ in range(max_iter):
        grad = A.T @ (1.0 / (A @ alpha)) / A.shape[0]
        accepted = False
        for _ in range(60):
            cand = _kliep_project(alpha + step * grad, b)
            if cand is not None:
                f_new = _kliep_objective(A, cand)
                gain = grad @ (cand - alpha)
                if f_new >= f + 1e-4 * max(gain, 0.0) and np.isfinite(f_new):
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            converged = True
            break
        change = abs(f_new - f) / max(abs(f), 1e-12)
        alpha, f = cand, f_new
        history.append(f)
        step *= 2.0
        if change < tol:
            converged = True
            break
    return alpha, history, converged


class KLIEP(BaseWeighter):
    """Kullback-Leibler importance estimation with likelihood cross-validation.

    The weight function is a nonnegative combination of Gaussian kernels
    centered on up to ``n_centers`` target points; its coefficients maximize
    the target log-likelihood of the reweighted source density while the
    source weights average to one.

    Parameters
    ----------
    sigmas : sequence of float, optional
        Bandwidth candidates. Defaults to the median pairwise distance times
        1/8, 1/4, 1/2, 1, 2 and 4.
    n_centers : int, default=100
    cv : int, default=5
        Folds over the target sample used to choose ``sigma``.
    max_iter : int, default=500
    tol : float, default=1e-7
        Relative objective change that counts as converged.
    random_state : int, RandomState instance or None

    Attributes
    ----------
    model_ : KernelModel
    cv_report_ : CvReport
    weights_ : ndarray of shape (n_source,)
    objective_history_ : list of float
        Objective after every accepted step of the final fit.
    """

    def __init__(self, sigmas=None, n_centers=100, cv=5, max_iter=500, tol=1e-7, random_state=None):
        self.sigmas = sigmas
        self.n_centers = n_centers
        self.cv = cv
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X_source, X_target):
        X_source, X_target = check_source_target(X_source, X_target, min_source=2, min_target=2)
        rng = check_random_state(self.random_state)
        sigmas = sorted(self.sigmas) if self.sigmas is not None else default_sigma_grid(X_source, X_target, rng)
        centers = _select_centers(X_target, self.n_centers, rng)
        n_folds = min(self.cv, X_target.shape[0])
        folds = _fold_ids(X_target.shape[0], n_folds, rng)

        report = CvReport()
        best, best_score = -1, -np.inf
        for sigma in sigmas:
            K_t = gaussian_kernel(X_target, centers, sigma)
            b = gaussian_kernel(X_source, centers, sigma).mean(axis=0)
            score = self._cv_score(K_t, b, folds, n_folds) if len(sigmas) > 1 else 0.0
            report.grid.append((float(sigma), None))
            report.scores.append(score)
            if score > best_score:
                best, best_score = len(report.grid) - 1, score
        if best < 0:
            raise EstimationError("KLIEP: no bandwidth gave a finite cross-validation score")
        report.chosen = best
        sigma = report.grid[best][0]

        A = gaussian_kernel(X_target, centers, sigma)
        b = gaussian_kernel(X_source, centers, sigma).mean(axis=0)
        alpha, history, converged = kliep_solve(A, b, self.max_iter, self.tol)
        model = KernelModel(centers, sigma, alpha)
        w = model(X_source)
        residual = abs(w.mean() - 1.0)
        if not np.all(np.isfinite(w)) or residual > 1e-6:
            raise EstimationError(f"KLIEP: mean-one constraint violated by {residual:.3g}")
        self.model_ = model
        self.cv_report_ = report
        self.objective_history_ = history
        self.converged_ = converged
        self.weights_ = np.maximum(w, 0.0)
        return self

    def _cv_score(self, K_t, b, folds, n_folds):
        scores = []
        for k in range(n_folds):
            held = folds == k
            try:
                alpha, _, _ = kliep_solve(K_t[~held], b, self.max_iter, self.tol)
            except EstimationError:
                return -np.inf
            v = K_t[held] @ alpha
            if np.any(v <= 0):
                return -np.inf
            scores.append(np.mean(np.log(v)))
        return float(np.mean(scores))


def kliep_fit(source, target, sigma_grid=None, b_max=100, random_state=None):
    est = KLIEP(sigmas=sigma_grid, n_centers=b_max, random_state=random_state)
    est.fit(getattr(source, "features", source), getattr(target, "features", target))
    return est.model_, est.cv_report_


# -- uLSIF -------------------------------------------------------------------


def ulsif_solve(K_source, K_target, lam):
    """Closed-form ridge coefficients for the least-squares ratio fit.

    Returns ``alpha, H, h``. An infinite ``lam`` gives the limiting alpha = 0.
    """
    H = K_source.T @ K_source / K_source.shape[0]
    h = K_target.mean(axis=0)
    if np.isinf(lam):
        return np.zeros_like(h), H, h
    alpha = np.linalg.solve(H + lam * np.eye(H.shape[0]), h)
    return alpha, H, h


class ULSIF(BaseWeighter):
    """Unconstrained least-squares importance fitting.

    Source weights are the kernel model evaluated at the source points with
    negative values clipped to zero. Bandwidth and ridge strength are chosen
    by k-fold cross-validation of 1/2 E_source[w^2] - E_target[w].

    Parameters
    ----------
    sigmas : sequence of float, optional
        Defaults to the median pairwise distance times 1/8 ... 4.
    lambdas : sequence of float, default=(1e-3, 1e-2, 1e-1, 1, 10)
    n_centers : int, default=100
    cv : int, default=5
    min_positive : int, default=1
        Fewer strictly positive source weights than this triggers a
        :class:`StarvationWarning` and sets ``starved_``.
    random_state : int, RandomState instance or None

    Attributes
    ----------
    model_, cv_report_, weights_
    residual_ : float
        ||(H + lambda I) alpha - h|| / ||h|| for the accepted fit.
    n_positive_ : int
    starved_ : bool
    """

    def __init__(self, sigmas=None, lambdas=LAMBDA_GRID, n_centers=100, cv=5, min_positive=1,
                 random_state=None):
        self.sigmas = sigmas
        self.lambdas = lambdas
        self.n_centers = n_centers
        self.cv = cv
        self.min_positive = min_positive
        self.random_state = random_state

    def fit(self, X_source, X_target):
        X_source, X_target = check_source_target(X_source, X_target, min_source=2, min_target=2)
        rng = check_random_state(self.random_state)
        sigmas = sorted(self.sigmas) if self.sigmas is not None else default_sigma_grid(X_source, X_target, rng)
        lambdas = sorted(self.lambdas)
        centers = _select_centers(X_target, self.n_centers, rng)
        n_folds = min(self.cv, X_source.shape[0], X_target.shape[0])
        folds_s = _fold_ids(X_source.shape[0], n_folds, rng)
        folds_t = _fold_ids(X_target.shape[0], n_folds, rng)

        report = CvReport()
        best, best_score = -1, np.inf
        single = len(sigmas) * len(lambdas) == 1
        for sigma in sigmas:
            K_s = gaussian_kernel(X_source, centers, sigma)
            K_t = gaussian_kernel(X_target, centers, sigma)
            for lam in lambdas:
                score = 0.0 if single else self._cv_score(K_s, K_t, lam, folds_s, folds_t, n_folds)
                report.grid.append((float(sigma), float(lam)))
                report.scores.append(score)
                if score < best_score:
                    best, best_score = len(report.grid) - 1, score
        if best < 0:
            raise EstimationError("uLSIF: no (sigma, lambda) gave a finite cross-validation score")
        report.chosen = best
        sigma, lam = report.grid[best]

        K_s = gaussian_kernel(X_source, centers, sigma)
        K_t = gaussian_kernel(X_target, centers, sigma)
        try:
            alpha, H, h = ulsif_solve(K_s, K_t, lam)
        except np.linalg.LinAlgError as exc:
            raise EstimationError(f"uLSIF: linear solve failed ({exc})") from None
        if not np.all(np.isfinite(alpha)):
            raise EstimationError("uLSIF: non-finite coefficients")
        if np.isinf(lam):
            residual = 0.0
        else:
            norm_h = np.linalg.norm(h)
            r = (H + lam * np.eye(H.shape[0])) @ alpha - h
            residual = float(np.linalg.norm(r) / norm_h) if norm_h > 0 else float(np.linalg.norm(r))
            if residual > 1e-8:
                raise EstimationError(f"uLSIF: relative residual {residual:.3g} exceeds 1e-8")

        model = KernelModel(centers, sigma, alpha)
        w = np.maximum(model(X_source), 0.0)
        self.model_ = model
        self.cv_report_ = report
        self.residual_ = residual
        self.weights_ = w
        self.n_positive_ = int(np.count_nonzero(w > 0))
        self.starved_ = self.n_positive_ < self.min_positive
        if self.starved_:
            warnings.warn(
                f"uLSIF: only {self.n_positive_} of {w.size} source weights are positive "
                f"({w.size - self.n_positive_} zero-weight points)",
                StarvationWarning,
                stacklevel=2,
            )
        return self

    @staticmethod
    def _cv_score(K_s, K_t, lam, folds_s, folds_t, n_folds):
        scores = []
        for k in range(n_folds):
            hs, ht = folds_s == k, folds_t == k
            try:
                alpha, _, _ = ulsif_solve(K_s[~hs], K_t[~ht], lam)
            except np.linalg.LinAlgError:
                return np.inf
            ws = np.maximum(K_s[hs] @ alpha, 0.0)
            wt = np.maximum(K_t[ht] @ alpha, 0.0)
            scores.append(0.5 * np.mean(ws ** 2) - np.mean(wt))
        score = float(np.mean(scores))
        return score if np.isfinite(score) else np.inf


def ulsif_fit(source, target, sigma_grid=None, lambda_grid=LAMBDA_GRID, b_max=100, min_positive=1,
              random_state=None):
    est = ULSIF(sigmas=sigma_grid, lambdas=lambda_grid, n_centers=b_max, min_positive=min_positive,
                random_state=random_state)
    est.fit(getattr(source, "features", source), getattr(target, "features", target))
    return est.model_, est.cv_report_
