"""Importance weighting for covariate shift by nearest-neighbor Voronoi counting."""
from .base import EstimationError, StarvationWarning, UniformWeighting
from .baselines import KLIEP, ULSIF, CvReport, KernelModel, ParzenRatio, kliep_fit, parzen_ratio, ulsif_fit
from .classify import SingularCovarianceError, WeightedDiscriminant, WeightedLDA, WeightedQDA, fit_weighted
from .data import (
    DataError,
    Dataset,
    EmptyClassError,
    PcaModel,
    SplitSpec,
    bias_sample,
    fit_pca,
    load_csv,
    make_splits,
    project,
)
from .nnw import NearestNeighborWeighting, NeighborIndex, build_index, nnew_plus_one, nnew_weights, normalize_mean_one

__version__ = "0.1.0"

__all__ = [
    "CvReport", "DataError", "Dataset", "EmptyClassError", "EstimationError", "KLIEP", "KernelModel",
    "NearestNeighborWeighting", "NeighborIndex", "ParzenRatio", "PcaModel", "SingularCovarianceError",
    "SplitSpec", "StarvationWarning", "ULSIF", "UniformWeighting", "WeightedDiscriminant", "WeightedLDA",
    "WeightedQDA", "bias_sample", "build_index", "fit_pca", "fit_weighted", "kliep_fit", "load_csv",
    "make_splits", "nnew_plus_one", "nnew_weights", "normalize_mean_one", "parzen_ratio", "project",
    "ulsif_fit",
]
