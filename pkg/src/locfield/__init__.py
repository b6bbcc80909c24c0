"""Local likelihood estimation for locally stationary Gaussian random fields."""

__version__ = "0.1.0"

from .core import Dataset, NeighborOrdering, NumericalError, WeightVector, order_neighbors, telescope_weights
from .covariance import (
    AnisotropicNSMatern,
    MaternParams,
    ModulatedModel,
    NSMatern,
    NSSmoothnessMatern,
    StationaryMatern,
    cov_matrix,
    matern_cov,
)
from .kernels import BandwidthPolicy, KernelSpec, WeightScheme, constrained_weights, kernel_weights
from .wll import FitResult, LocalModelFamily, fit_point, fit_surface, stationary_mle, variance_estimate, wll_objective

__all__ = [
    "AnisotropicNSMatern",
    "BandwidthPolicy",
    "Dataset",
    "FitResult",
    "KernelSpec",
    "LocalModelFamily",
    "MaternParams",
    "ModulatedModel",
    "NSMatern",
    "NSSmoothnessMatern",
    "NeighborOrdering",
    "NumericalError",
    "StationaryMatern",
    "WeightScheme",
    "WeightVector",
    "constrained_weights",
    "cov_matrix",
    "fit_point",
    "fit_surface",
    "kernel_weights",
    "matern_cov",
    "order_neighbors",
    "stationary_mle",
    "telescope_weights",
    "variance_estimate",
    "wll_objective",
]
