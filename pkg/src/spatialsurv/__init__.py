"""Bayesian spatial competing-risks survival modeling.

Proportional cause-specific hazards with piecewise-constant baselines
under a multiplicative gamma prior, spatially varying intercepts and
slopes with reduced-rank Matern 3/2 priors, gradient-based posterior
sampling, kriging, predictive model comparison, and posterior risk-group
clustering.
"""

__version__ = "0.1.0"

from .cluster import (
    ClusterResult,
    assignment_probability,
    cluster_surface,
    expected_kmeans_loss,
)
from .diagnostics import WaicReport, ess, split_rhat, summarize, waic
from .errors import (
    ConfigError,
    DataError,
    NumericalError,
    RequestError,
    SpatialsurvError,
)
from .model import (
    Dataset,
    Hyperparameters,
    ModelSpec,
    ParameterState,
    TimeGrid,
    build_time_grid,
    linear_predictor,
    log_likelihood,
    log_posterior_grad,
    log_prior,
    mgp_prior_correlation,
    piecewise_cum_hazard,
)
from .sampler import PosteriorDraws, SamplerConfig, fit, leapfrog
from .simulate import (
    SimConfig,
    SimTruth,
    calibrate_censoring,
    default_truth,
    draw_event_times,
    generate_dataset,
    lmc_surfaces,
)
from .spatial import (
    HsgpBasis,
    HsgpConfig,
    MaternParams,
    exact_cov,
    hsgp_basis,
    krige_exact,
    krige_hsgp,
    matern32,
    matern32_spectral_density,
    normalize_coords,
    sum_to_zero,
    surface_from_weights,
)

__all__ = [
    "__version__",
    "ClusterResult",
    "assignment_probability",
    "cluster_surface",
    "expected_kmeans_loss",
    "WaicReport",
    "ess",
    "split_rhat",
    "summarize",
    "waic",
    "ConfigError",
    "DataError",
    "NumericalError",
    "RequestError",
    "SpatialsurvError",
    "Dataset",
    "Hyperparameters",
    "ModelSpec",
    "ParameterState",
    "TimeGrid",
    "build_time_grid",
    "linear_predictor",
    "log_likelihood",
    "log_posterior_grad",
    "log_prior",
    "mgp_prior_correlation",
    "piecewise_cum_hazard",
    "PosteriorDraws",
    "SamplerConfig",
    "fit",
    "leapfrog",
    "SimConfig",
    "SimTruth",
    "calibrate_censoring",
    "default_truth",
    "draw_event_times",
    "generate_dataset",
    "lmc_surfaces",
    "HsgpBasis",
    "HsgpConfig",
    "MaternParams",
    "exact_cov",
    "hsgp_basis",
    "krige_exact",
    "krige_hsgp",
    "matern32",
    "matern32_spectral_density",
    "normalize_coords",
    "sum_to_zero",
    "surface_from_weights",
]
