"""Bilinear inverse problems with operator uncertainty.

Data follow ``b = A0 x + A.(y, x) + e`` where ``x`` is the image, ``y``
the coefficients of a low-rank operator correction and ``A`` a third-order
tensor.  The package provides Gaussian MAP solvers, a Gibbs sampler, a
row-wise PCA operator model and a synthetic test bench.
"""

from ._accel import BACKEND
from .covariance import (
    CovarianceModel,
    NoiseSpec,
    SpatialCovarianceSpec,
    build_noise_covariance,
    build_spatial_covariance,
)
from .errors import (
    ConvergenceError,
    DimensionError,
    FactorizationError,
    RangeWarning,
    ZeroOperatorWarning,
)
from .gibbs import ChainConfig, ChainSummary, run_gibbs
from .marginal import log_marginal_posterior
from .objective import Problem, phi, phi_gradient, phi_hessian
from .pca import OperatorEnsemble, PcaModel, rowwise_pca
from .solvers import SolverOptions, SolveResult, bcd_solve, fixed_operator_map, gn_solve
from .tensor import BilinearTensor, JointState

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BilinearTensor",
    "ChainConfig",
    "ChainSummary",
    "ConvergenceError",
    "CovarianceModel",
    "DimensionError",
    "FactorizationError",
    "JointState",
    "NoiseSpec",
    "OperatorEnsemble",
    "PcaModel",
    "Problem",
    "RangeWarning",
    "SolveResult",
    "SolverOptions",
    "SpatialCovarianceSpec",
    "ZeroOperatorWarning",
    "bcd_solve",
    "build_noise_covariance",
    "build_spatial_covariance",
    "fixed_operator_map",
    "gn_solve",
    "log_marginal_posterior",
    "phi",
    "phi_gradient",
    "phi_hessian",
    "rowwise_pca",
    "run_gibbs",
]
