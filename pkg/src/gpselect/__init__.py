"""Model selection for Gaussian-process interpolation with Matern covariances."""

from ._backend import BACKEND, use_backend
from .criteria import CriterionSpec, DegenerateData, evaluate, hybrid_nll_spe
from .gp import Dataset, GaussianPredictive, NotPositiveDefinite, loo_predictives, predict
from .gradients import criterion_gradient, score_gradient
from .kernel import MaternParams, Regularity, cov_matrix, default_nu_grid, matern_correlation
from .scoring import CRPS, IS95, NLPD, SPE, ScoringRule, mean_score, score
from .selection import FitConfig, FitResult, SelectionError, fit, range_bound, select_model

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CRPS",
    "CriterionSpec",
    "Dataset",
    "DegenerateData",
    "FitConfig",
    "FitResult",
    "GaussianPredictive",
    "IS95",
    "MaternParams",
    "NLPD",
    "NotPositiveDefinite",
    "Regularity",
    "SPE",
    "ScoringRule",
    "SelectionError",
    "cov_matrix",
    "criterion_gradient",
    "default_nu_grid",
    "evaluate",
    "fit",
    "hybrid_nll_spe",
    "loo_predictives",
    "matern_correlation",
    "mean_score",
    "predict",
    "range_bound",
    "score",
    "score_gradient",
    "select_model",
    "use_backend",
]
