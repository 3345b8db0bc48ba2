"""Sparse dynamic chain-graph models for ordinal, continuous, and mixed
multivariate time series.

A latent Gaussian-copula VAR(1) couples the observed panel to a precision
matrix (undirected, within-slice network) and an autoregressive coefficient
matrix (directed, lag-1 network); both are estimated jointly by a penalized
EM algorithm with L1 or SCAD penalties and selected by BIC.
"""

__version__ = "0.1.0"

from .dataset import (
    LatentBounds,
    MarginalModel,
    OrdinalSeriesDataset,
    VarKind,
    compute_bounds,
    empirical_cdf,
    estimate_marginals,
    load_dataset,
)
from .em import ChainGraphModel, FitOptions, GridResult, bic, fit, grid_search
from .estep import SufficientStats, SweepConfig, accumulate_stats, expected_s_gamma
from .moments import (
    CellMoments,
    ConditionalParams,
    TruncatedNormalSpec,
    approx_first_moment,
    approx_second_moment,
    conditional_params,
    mean_field_product,
    truncnorm_moments,
)
from .mstep import (
    PenaltyConfig,
    WeightMatrices,
    compute_weights,
    glasso_theta,
    q_pen_value,
    scad_derivative,
    update_gamma_cd,
)
from .simulate import (
    GroundTruth,
    RecoveryScores,
    StudyConfig,
    gen_gamma,
    gen_theta,
    run_study,
    score_support,
    simulate_panel,
)

__all__ = [
    "__version__",
    "CellMoments",
    "ChainGraphModel",
    "ConditionalParams",
    "FitOptions",
    "GridResult",
    "GroundTruth",
    "LatentBounds",
    "MarginalModel",
    "OrdinalSeriesDataset",
    "PenaltyConfig",
    "RecoveryScores",
    "StudyConfig",
    "SufficientStats",
    "SweepConfig",
    "TruncatedNormalSpec",
    "VarKind",
    "WeightMatrices",
    "accumulate_stats",
    "approx_first_moment",
    "approx_second_moment",
    "bic",
    "compute_bounds",
    "compute_weights",
    "conditional_params",
    "empirical_cdf",
    "estimate_marginals",
    "expected_s_gamma",
    "fit",
    "gen_gamma",
    "gen_theta",
    "glasso_theta",
    "grid_search",
    "load_dataset",
    "mean_field_product",
    "q_pen_value",
    "run_study",
    "scad_derivative",
    "score_support",
    "simulate_panel",
    "truncnorm_moments",
    "update_gamma_cd",
]
