"""Gamblet multiresolution solvers and gamblet-accelerated implicit time integrators."""

from .discretization import TAU_INF, CoefficientField, FemGrid, assemble, multiscale_coefficient
from .hierarchy import build_hierarchy
from .linalg import ScalarField, SolverError
from .solve import SubbandSolution, solve, subband_components
from .transform import GambletHierarchy, exact_transform, localized_transform

__all__ = [
    "TAU_INF",
    "CoefficientField",
    "FemGrid",
    "GambletHierarchy",
    "ScalarField",
    "SolverError",
    "SubbandSolution",
    "assemble",
    "build_hierarchy",
    "exact_transform",
    "localized_transform",
    "multiscale_coefficient",
    "solve",
    "subband_components",
]
