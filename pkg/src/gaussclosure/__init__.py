"""Gaussian closure of the Fokker-Planck equation for bead-spring chains.

Submodules: ``chain`` (Rouse matrix, normal modes), ``quadrature``
(Gauss-Hermite rules), ``gaussian`` (block covariances), ``variational``
(tangent space, projection, residuals), ``dynamics`` (closure ODE / PDE),
``reference`` (stochastic and grid oracles) and ``cli``.
"""
__version__ = "0.1.0"

from .chain import ChainSpec, NormalModes, chain_modes, normal_modes, rouse_eigenvalues, rouse_matrix
from .dynamics import (CFLError, FlowSpec, IntegrationError, ModelParams, SpatialGrid, SpatialState, Trajectory,
                       integrate_homogeneous, integrate_spatial, lyapunov_steady, oscillatory_extension,
                       planar_extension, simple_shear, steady_state, zero_flow)
from .gaussian import BlockCovariance, NotPositiveDefinite, conformation, density, extra_stress, stationary_covariance
from .quadrature import gauss_hermite, integrate_gaussian, tensor_rule

__all__ = [
    "__version__",
    "ChainSpec", "NormalModes", "chain_modes", "normal_modes", "rouse_eigenvalues", "rouse_matrix",
    "CFLError", "FlowSpec", "IntegrationError", "ModelParams", "SpatialGrid", "SpatialState", "Trajectory",
    "integrate_homogeneous", "integrate_spatial", "lyapunov_steady", "oscillatory_extension",
    "planar_extension", "simple_shear", "steady_state", "zero_flow",
    "BlockCovariance", "NotPositiveDefinite", "conformation", "density", "extra_stress", "stationary_covariance",
    "gauss_hermite", "integrate_gaussian", "tensor_rule",
]
