"""Benchmark harness: biased-source experiments with weighted LDA/QDA, and oracle checks."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import multivariate_normal

from .base import EstimationError, StarvationWarning, UniformWeighting
from .baselines import KLIEP, ULSIF, ParzenRatio
from .classify import WeightedDiscriminant
from .data import (
    DataError,
    Dataset,
    EmptyClassError,
    PcaModel,
    bias_sample,
    holdout_indices,
    load_csv,
    train_indices,
)
from .nnw import NearestNeighborWeighting, normalize_mean_one

logger = logging.getLogger(__name__)

ESTIMATORS = ("nnew", "nnew1", "kliep", "ulsif", "parzen", "uniform")
CLASSIFIERS = ("lda", "qda")
MAX_BIAS_ATTEMPTS = 20


def make_weighter(name: str, random_state=None, **params):
    """Weight estimator registered under ``name``."""
    if name == "nnew":
        return NearestNeighborWeighting(plus_one=False, **params)
    if name == "nnew1":
        return NearestNeighborWeighting(plus_one=True, **params)
    if name == "kliep":
        return KLIEP(random_state=random_state, **params)
    if name == "ulsif":
        return ULSIF(random_state=random_state, **params)
    if name == "parzen":
        return ParzenRatio(**params)
    if name == "uniform":
        return UniformWeighting()
    raise ValueError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")


def estimate_weights(name, X_source, X_target, random_state=None) -> np.ndarray:
    """Mean-one weights from estimator ``name``; raises EstimationError on failure."""
    weighter = make_weighter(name, random_state)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StarvationWarning)
        try:
            w = weighter.fit_weights(X_source, X_target)
        except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise EstimationError(f"{name}: {exc}") from exc
    try:
        return normalize_mean_one(w)
    except ValueError as exc:
        raise EstimationError(f"{name}: {exc}") from None


# -- configuration -----------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Protocol settings. Defaults follow the published setup.

    ``datasets`` holds (name, path) pairs; a :class:`Dataset` may stand in
    for the path.
    """

    datasets: list = field(default_factory=list)
    estimators: list = field(default_factory=lambda: ["kliep", "ulsif", "parzen", "nnew", "nnew1"])
    classifiers: list = field(default_factory=lambda: ["lda", "qda"])
    repetitions: int = 100
    retained_fraction: float = 0.999
    reduction_factor: float = 5.0
    seed: int = 0
    train_modes: list = field(default_factory=lambda: ["minimal", "half"])
    label_column: str = "class"
    standardize: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ValueError(f"unknown estimator {e!r}; choose from {', '.join(ESTIMATORS)}")
        for c in self.classifiers:
            if c not in CLASSIFIERS:
                raise ValueError(f"unknown classifier {c!r}; choose from {', '.join(CLASSIFIERS)}")
        for m in self.train_modes:
            if m not in ("half", "minimal"):
                raise ValueError(f"unknown train mode {m!r}")
        if not self.estimators or not self.classifiers or not self.train_modes:
            raise ValueError("need at least one estimator, classifier and train mode")


_LIST_KEYS = {"estimators", "classifiers", "train_modes"}
_CASTS = {"repetitions": int, "seed": int, "retained_fraction": float, "reduction_factor": float,
          "label_column": str}


def _parse_bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def config_from_mapping(values: dict) -> ExperimentConfig:
    """Build a config from string values such as those in a key = value file."""
    kwargs = {}
    for key, raw in values.items():
        key = key.replace("-", "_")
        if key == "datasets":
            kwargs["datasets"] = list(raw)
        elif key in _LIST_KEYS:
            items = raw if isinstance(raw, list) else [s.strip() for s in str(raw).split(",")]
            kwargs[key] = [s.lower() for s in items if s]
        elif key == "standardize":
            kwargs[key] = raw if isinstance(raw, bool) else _parse_bool(str(raw))
        elif key in _CASTS:
            kwargs[key] = _CASTS[key](raw)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return ExperimentConfig(**kwargs)


def read_config(path) -> dict:
    """Parse a ``key = value`` file into raw values.

    ``dataset = name, path`` may repeat; relative paths are resolved
    against the config file's directory. ``#`` starts a comment.
    """
    path = Path(path)
    values: dict = {}
    datasets = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "dataset":
            name, _, ds_path = (s.strip() for s in value.partition(","))
            if not ds_path:
                raise ValueError(f"{path}:{lineno}: dataset needs 'name, path'")
            p = Path(ds_path)
            datasets.append((name, str(p if p.is_absolute() else path.parent / p)))
        else:
            values[key] = value
    if datasets:
        values["datasets"] = datasets
    return values


# -- results -----------------------------------------------------------------


@dataclass
class CellResult:
    """Aggregate over repetitions; the mean is over successful repetitions only."""

    mean_error: float = math.nan
    stderr_of_mean: float = math.nan
    n_successes: int = 0
    n_failures: int = 0

    @classmethod
    def from_errors(cls, errors, n_failures=0) -> "CellResult":
        errors = np.asarray(errors, dtype=float)
        n = errors.size
        if n == 0:
            return cls(math.nan, math.nan, 0, n_failures)
        stderr = float(errors.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(errors.mean()), stderr, n, n_failures)

    @property
    def is_dash(self) -> bool:
        return self.n_successes == 0


def mark_significance(row, z=2.0) -> list[str]:
    """Flag each cell as "best", "tied", "plain" or "dash".

    A cell is tied with the best when its mean is within z times the sum of
    both standard errors. Equal means go to the earliest cell.
    """
    row = list(row)
    if not row:
        raise ValueError("row must be nonempty")
    live = [i for i, c in enumerate(row) if not c.is_dash]
    if not live:
        return ["dash"] * len(row)
    best = min(live, key=lambda i: (row[i].mean_error, i))
    b = row[best]
    flags = []
    for i, c in enumerate(row):
        if c.is_dash:
            flags.append("dash")
        elif i == best:
            flags.append("best")
        elif c.mean_error <= b.mean_error + z * (b.stderr_of_mean + c.stderr_of_mean):
            flags.append("tied")
        else:
            flags.append("plain")
    return flags


_MARKS = {"best": "*", "tied": "~", "plain": "", "dash": ""}


def format_cell(mean_error, flag) -> str:
    if flag == "dash":
        return "-"
    return f"{mean_error:.3f}{_MARKS[flag]}"


CSV_COLUMNS = ["dataset", "train_mode", "classifier", "estimator", "mean", "stderr", "n_success",
               "n_fail", "flag"]


@dataclass
class ExperimentReport:
    """Cells keyed by (dataset, train_mode, classifier, estimator), in run order."""

    config: ExperimentConfig
    cells: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    @property
    def datasets(self):
        return list(dict.fromkeys(k[0] for k in self.cells))

    def row(self, dataset, mode, classifier):
        return [self.cells[(dataset, mode, classifier, e)] for e in self.config.estimators]

    def flags(self):
        out = {}
        for ds in self.datasets:
            for mode in self.config.train_modes:
                for clf in self.config.classifiers:
                    for e, f in zip(self.config.estimators, mark_significance(self.row(ds, mode, clf))):
                        out[(ds, mode, clf, e)] = f
        return out

    def records(self):
        flags = self.flags()
        for key, cell in self.cells.items():
            yield {
                "dataset": key[0], "train_mode": key[1], "classifier": key[2], "estimator": key[3],
                "mean": None if cell.is_dash else cell.mean_error,
                "stderr": None if cell.is_dash else cell.stderr_of_mean,
                "n_success": cell.n_successes, "n_fail": cell.n_failures, "flag": flags[key],
            }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.records():
            writer.writerow([
                r["dataset"], r["train_mode"], r["classifier"], r["estimator"],
                "" if r["mean"] is None else repr(r["mean"]),
                "" if r["stderr"] is None else repr(r["stderr"]),
                r["n_success"], r["n_fail"], r["flag"],
            ])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"cells": list(self.records()), "diagnostics": self.diagnostics}, indent=2) + "\n"

    def to_table(self) -> str:
        """Aligned text tables, one per (classifier, train mode); * best, ~ tied, - failed."""
        flags = self.flags()
        est = self.config.estimators
        width = max([len("dataset")] + [len(d) for d in self.datasets]) + 2
        col = max(8, max(len(e) for e in est) + 2)
        lines = []
        for clf in self.config.classifiers:
            for mode in self.config.train_modes:
                lines.append(f"{clf.upper()} / {mode}")
                lines.append("dataset".ljust(width) + "".join(e.rjust(col) for e in est))
                for ds in self.datasets:
                    cells = [format_cell(self.cells[(ds, mode, clf, e)].mean_error, flags[(ds, mode, clf, e)])
                             for e in est]
                    lines.append(ds.ljust(width) + "".join(c.rjust(col) for c in cells))
                lines.append("")
        return "\n".join(lines)


def parse_report_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    for r in rows:
        r["mean"] = float(r["mean"]) if r["mean"] else math.nan
        r["stderr"] = float(r["stderr"]) if r["stderr"] else math.nan
        r["n_success"] = int(r["n_success"])
        r["n_fail"] = int(r["n_fail"])
    return rows


# -- the experiment ----------------------------------------------------------


def _resolve_dataset(name, source, label_column) -> Dataset:
    if isinstance(source, Dataset):
        return source
    return load_csv(source, label_column=label_column, name=name)


def prepare_target(raw: Dataset, retained_fraction=0.999, standardize=False) -> tuple[PcaModel, Dataset]:
    """Optionally z-score, then PCA-project the full dataset; the result is the target domain."""
    X = raw.features
    if standardize:
        sd = X.std(axis=0, ddof=1)
        X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    pca = PcaModel(retained_fraction).fit(X)
    return pca, Dataset(pca.transform(X), raw.labels, raw.name, raw.label_names)


def draw_source(target: Dataset, reduction_factor, seed_key) -> Dataset:
    """Bias-sample the target, reseeding when a draw empties a class."""
    for attempt in range(MAX_BIAS_ATTEMPTS):
        try:
            return bias_sample(target, reduction_factor, seed=[*seed_key, attempt])
        except EmptyClassError:
            continue
    raise DataError(f"bias sampling emptied a class in {MAX_BIAS_ATTEMPTS} attempts")


def evaluate_weighting(estimator, classifiers, train: Dataset, X_pool, X_test, y_test,
                       random_state=None) -> dict:
    """Weights from ``estimator`` on (train, pool), then each weighted classifier's test error.

    Failed estimation or fitting maps the classifier to None.
    """
    try:
        w = estimate_weights(estimator, train.features, X_pool, random_state=random_state)
    except EstimationError as exc:
        logger.debug("%s: %s", estimator, exc)
        return dict.fromkeys(classifiers)
    out = {}
    for c in classifiers:
        try:
            model = WeightedDiscriminant(c).fit(train.features, train.labels, sample_weight=w)
            out[c] = model.error_rate(X_test, y_test)
        except EstimationError as exc:
            logger.debug("%s/%s: %s", estimator, c, exc)
            out[c] = None
    return out


def run_repetition(target: Dataset, config: ExperimentConfig, ds_index: int, rep: int) -> dict:
    """One repetition for every (mode, estimator, classifier); maps keys to an error or None."""
    seed = int(config.seed)
    source = draw_source(target, config.reduction_factor, (seed, ds_index, rep))
    d = target.n_features
    out = {}
    for m, mode in enumerate(config.train_modes):
        rng = np.random.default_rng([seed, ds_index, rep, 1000 + m])
        try:
            tr = train_indices(source.labels, d, mode, rng)
            train = source.subset(tr)
            te = holdout_indices(target.features, train.features, rng)
        except DataError as exc:
            logger.debug("%s rep %d %s: %s", target.name, rep, mode, exc)
            for e in config.estimators:
                for c in config.classifiers:
                    out[(mode, c, e)] = None
            continue
        pool = np.setdiff1d(np.arange(target.n_samples), te)
        X_pool = target.features[pool]
        X_test, y_test = target.features[te], target.labels[te]
        est_seed = int(rng.integers(2 ** 31))
        for e in config.estimators:
            for c, err in evaluate_weighting(e, config.classifiers, train, X_pool, X_test, y_test,
                                             est_seed).items():
                out[(mode, c, e)] = err
    return out


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run every repetition for every dataset and aggregate into a report.

    Unloadable datasets are skipped with a diagnostic; estimator or
    classifier failures only count against their cell.
    """
    report = ExperimentReport(config)
    for ds_index, (name, src) in enumerate(config.datasets):
        try:
            raw = _resolve_dataset(name, src, config.label_column)
            if raw.labels is None:
                raise DataError("dataset has no labels")
            _, target = prepare_target(raw, config.retained_fraction, config.standardize)
        except (OSError, DataError, ValueError) as exc:
            report.diagnostics.append(f"{name}: skipped ({exc})")
            logger.warning("skipping dataset %s: %s", name, exc)
            continue
        target = Dataset(target.features, target.labels, name, target.label_names)
        keys = [(m, c, e) for m in config.train_modes for c in config.classifiers for e in config.estimators]
        errors = {k: [] for k in keys}
        failures = dict.fromkeys(keys, 0)
        try:
            for rep in range(config.repetitions):
                for k, err in run_repetition(target, config, ds_index, rep).items():
                    if err is None:
                        failures[k] += 1
                    else:
                        errors[k].append(err)
        except DataError as exc:
            report.diagnostics.append(f"{name}: skipped ({exc})")
            continue
        for m in config.train_modes:
            for c in config.classifiers:
                for e in config.estimators:
                    k = (m, c, e)
                    report.cells[(name, m, c, e)] = CellResult.from_errors(errors[k], failures[k])
                    report.errors[(name, m, c, e)] = errors[k]
    return report


# -- synthetic oracle --------------------------------------------------------


@dataclass(frozen=True)
class SyntheticShift:
    """Gaussian source and target densities with a closed-form importance ratio."""

    source_mean: tuple
    source_cov: tuple
    target_mean: tuple
    target_cov: tuple

    def __post_init__(self):
        for cov in (self.source_cov, self.target_cov):
            C = np.atleast_2d(np.asarray(cov, dtype=float))
            if C.shape != (self.dim, self.dim) or not np.allclose(C, C.T) or np.linalg.eigvalsh(C)[0] <= 0:
                raise ValueError("covariances must be symmetric positive definite and match the mean")
        if len(self.target_mean) != self.dim:
            raise ValueError("source and target means differ in dimension")

    @property
    def dim(self) -> int:
        return len(self.source_mean)

    @classmethod
    def mean_shift(cls, shift: float, dim: int = 1) -> "SyntheticShift":
        """N(0, I) source and N(shift * e_1, I) target."""
        eye = tuple(map(tuple, np.eye(dim)))
        target = (float(shift),) + (0.0,) * (dim - 1)
        return cls((0.0,) * dim, eye, target, eye)

    def _dists(self):
        return (multivariate_normal(np.asarray(self.source_mean), np.asarray(self.source_cov)),
                multivariate_normal(np.asarray(self.target_mean), np.asarray(self.target_cov)))

    def sample_source(self, n, rng) -> np.ndarray:
        return rng.multivariate_normal(np.asarray(self.source_mean), np.atleast_2d(self.source_cov), size=n)

    def sample_target(self, n, rng) -> np.ndarray:
        return rng.multivariate_normal(np.asarray(self.target_mean), np.atleast_2d(self.target_cov), size=n)

    def log_ratio(self, X) -> np.ndarray:
        ps, pt = self._dists()
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return np.atleast_1d(pt.logpdf(X) - ps.logpdf(X))

    def true_ratio(self, X) -> np.ndarray:
        return np.exp(self.log_ratio(X))


def parse_shift(text: str) -> SyntheticShift:
    """``gauss-mean:<shift>[:<dim>]`` -> N(0, I) to N(shift e_1, I)."""
    parts = text.split(":")
    if parts[0] != "gauss-mean" or len(parts) not in (2, 3):
        raise ValueError(f"unknown shift family {text!r}; expected gauss-mean:<shift>[:<dim>]")
    try:
        shift = float(parts[1])
        dim = int(parts[2]) if len(parts) == 3 else 1
    except ValueError:
        raise ValueError(f"bad shift parameters in {text!r}") from None
    if not math.isfinite(shift) or dim < 1:
        raise ValueError(f"bad shift parameters in {text!r}")
    return SyntheticShift.mean_shift(shift, dim)


def pearson(a, b) -> float:
    """Pearson correlation, defined as 0 when either vector is constant."""
    a = np.asarray(a, dtype=float) - np.mean(a)
    b = np.asarray(b, dtype=float) - np.mean(b)
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b / den) if den > 0 else 0.0


@dataclass(frozen=True)
class OracleResult:
    correlation: float
    ms_log_error: float
    n_positive: int


def oracle_validate(shift: SyntheticShift, n_source, n_target, estimator="nnew", seed=0) -> OracleResult:
    """Compare mean-one estimated weights with the mean-one true ratio at the source points.

    The log error averages over strictly positive weights only. Raises
    EstimationError if the estimator fails.
    """
    rng = np.random.default_rng(seed)
    Xs = shift.sample_source(n_source, rng)
    Xt = shift.sample_target(n_target, rng)
    w = estimate_weights(estimator, Xs, Xt, random_state=int(rng.integers(2 ** 31)))
    r = shift.true_ratio(Xs)
    r = r / r.mean()
    pos = w > 0
    msle = float(np.mean((np.log(w[pos]) - np.log(r[pos])) ** 2)) if pos.any() else math.nan
    return OracleResult(pearson(w, r), msle, int(pos.sum()))
