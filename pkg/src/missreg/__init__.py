"""Linear regression with missing covariates and unlabelled data."""

from .dantzig import DantzigFit, LambdaRule, cross_validate_lambda, fit_dantzig, solve_dantzig
from .errors import MissregError
from .lowdim import (
    LowDimFit,
    WeightSet,
    estimate_weights,
    fit_crossfit,
    fit_thresholded_unstructured,
    fit_weighted_imputation,
    oracle_weights,
)
from .moments import ClipConfig, clip_covariance, estimate_moments, restricted_eigenvalue
from .patterns import MissingDataset, ObservationPattern, group_by_pattern, read_csv

__version__ = "0.1.0"
