"""Rank-based bias-corrected nearest-neighbor matching for average treatment effects."""

from .basis import Basis, BasisSpec, build_basis, sup_norm_estimate
from .errors import (
    ConfigurationError,
    DegenerateFitError,
    DomainError,
    InputError,
    RankMatchError,
)
from .estimator import (
    AteReport,
    Dataset,
    confidence_interval,
    estimate_ate,
    estimate_ate_generalized,
    variance_estimate,
)
from .matching import MatchOutput, RatioEstimate, density_ratio_at, match_nn, odds_from_ratio
from .regression import SeriesFit, fit_series, gram_diagnostics, l2_error_mc, predict
from .transform import RankMap, apply_ecdf, apply_ecdf_batch, fit_ecdf

__version__ = "0.1.0"

__all__ = [
    "AteReport", "Basis", "BasisSpec", "ConfigurationError", "Dataset", "DegenerateFitError",
    "DomainError", "InputError", "MatchOutput", "RankMap", "RankMatchError", "RatioEstimate",
    "SeriesFit", "apply_ecdf", "apply_ecdf_batch", "build_basis", "confidence_interval",
    "density_ratio_at", "estimate_ate", "estimate_ate_generalized", "fit_ecdf", "fit_series",
    "gram_diagnostics", "l2_error_mc", "match_nn", "odds_from_ratio", "predict",
    "sup_norm_estimate", "variance_estimate",
]
