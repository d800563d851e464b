"""Nonlinear-solver benchmark laboratory on 1D cohesive-zone bar problems."""

from .fem import (
    CaseSpec,
    CohesiveLaw,
    Material,
    Mesh1D,
    Problem,
    assemble_jacobian,
    assemble_residual,
    build_mesh,
    cohesive_tangent,
    cohesive_traction,
    damage,
    make_case,
)
from .linalg import GmresPolicy, condition_number, gmres_solve, lu_solve
from .solvers import Counters, SolveReport, SolverConfig, solve

__version__ = "0.1.0"

__all__ = [
    "CaseSpec", "CohesiveLaw", "Material", "Mesh1D", "Problem",
    "assemble_jacobian", "assemble_residual", "build_mesh",
    "cohesive_tangent", "cohesive_traction", "damage", "make_case",
    "GmresPolicy", "condition_number", "gmres_solve", "lu_solve",
    "Counters", "SolveReport", "SolverConfig", "solve",
    "__version__",
]
