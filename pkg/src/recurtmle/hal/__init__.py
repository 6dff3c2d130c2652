"""Highly adaptive lasso intensity estimation on indicator bases."""

from .basis import BasisSpec, HalConfig, make_basis, quantile_knots, variable_names
from .design import PoissonDesign, compress, expand_design
from .fit import CvSummary, HalFit, RATE_FLOOR, fit_hal, fit_penalized_poisson
from .solver import kkt_residual, lambda_max, solve

__all__ = [
    "BasisSpec",
    "CvSummary",
    "HalConfig",
    "HalFit",
    "PoissonDesign",
    "RATE_FLOOR",
    "compress",
    "expand_design",
    "fit_hal",
    "fit_penalized_poisson",
    "kkt_residual",
    "lambda_max",
    "make_basis",
    "quantile_knots",
    "solve",
    "variable_names",
]
