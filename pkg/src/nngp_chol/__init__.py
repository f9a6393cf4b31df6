"""Nearest-neighbor sparse Cholesky factors for Gaussian-process models."""
from ._backend import name as backend_name, use_backend
from .covariance import CovarianceSpec, cross_covariance, kernel_value
from .errors import (
    DuplicateLocation,
    NonFiniteLikelihood,
    NonPositiveConditionalVariance,
    NotPositiveDefinite,
    SingularDesign,
)
from .factor import (
    SparseCholesky,
    apply_factor,
    backsolve_factor,
    build_factor,
    log_det,
    quad_form,
    simulate,
)
from .geometry import LocationSet, NeighborGraph, build_neighbor_graph, order_locations

__version__ = "0.1.0"
