"""Cohesive interfaces on surrogate facets of non-fitted finite element meshes.

Modules
-------
mesh          mesh container, structured generators, facet topology, IO
geometry      PCA-accelerated point classification against watertight boundaries
surrogate     dominant-volume grain assignment and surrogate interface data
constitutive  bulk elasticity and traction-separation laws
solver        shifted cohesive assembly, Newton iteration, load stepping
mms           manufactured solutions and convergence studies
conformalize  interface-fitted mesh generation and solution projection
problems      ready-made benchmark problems
cli           command-line entry point
"""

from .constitutive import BilinearMixedMode, CohesiveState, ElasticMaterial, Exponential, Linear, cohesive_traction
from .geometry import BoundaryRep, Sideness, build_index, classify_point, classify_points
from .mesh import Mesh, NodalField, build_crossed_tri, build_structured_quad, interior_facets
from .solver import BoundaryCondition, Problem, Schedule, SolverConfig, run_load_stepping
from .surrogate import GrainSet, assign_grain_ids, build_surrogate_interface

__version__ = "0.1.0"

__all__ = [
    "BilinearMixedMode",
    "BoundaryCondition",
    "BoundaryRep",
    "CohesiveState",
    "ElasticMaterial",
    "Exponential",
    "GrainSet",
    "Linear",
    "Mesh",
    "NodalField",
    "Problem",
    "Schedule",
    "Sideness",
    "SolverConfig",
    "assign_grain_ids",
    "build_crossed_tri",
    "build_index",
    "build_structured_quad",
    "build_surrogate_interface",
    "classify_point",
    "classify_points",
    "cohesive_traction",
    "interior_facets",
    "run_load_stepping",
]
