"""Generalized posteriors exp(-n f_n(theta)) * prior: fitting, Laplace
approximation, sampling and large-sample diagnostics."""

from .core import (
    DomainBox,
    GBVError,
    GeneralizedPosterior,
    ObjectiveModel,
    PriorSpec,
    gaussian_prior,
    flat_prior,
    scaled_model,
    uniform_prior,
    unnormalized_log_posterior,
    validate_model,
)
from .diagnostics import (
    concentration_mass,
    coverage_experiment,
    credible_set,
    sandwich_covariance,
    tv_to_normal_limit,
)
from .laplace import laplace_log_normalizer, laplace_normal_density
from .numerics import bvm_audit, find_minimizer
from .sampler import DrawMatrix, grid_density, rwm_sample

__version__ = "0.1.0"
