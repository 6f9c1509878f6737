"""Model zoo: exponential families and GLMs, pseudolikelihoods, Cox and median losses."""

from .expfam import (
    BERNOULLI,
    PLUSMINUS,
    POISSON,
    ExpFam1P,
    GLMDataset,
    build_glm,
    build_iid_expfam,
    family,
    gaussian,
    linear_predictor_model,
)
from .pseudolik import (
    FieldSample,
    ThetaPacking,
    TorusLattice,
    boltzmann_pseudolik,
    conditional_probability,
    gmrf_pseudolik,
    ising_pseudolik,
)
from .special import (
    GAUSSIAN_CDF,
    LOGISTIC_CDF,
    SurvivalDataset,
    SymmetricCDF,
    cox_partial_model,
    median_location_model,
    sample_median,
)
