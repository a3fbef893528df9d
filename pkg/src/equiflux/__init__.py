"""Equilibrated flux reconstruction and degree-robust H(div) liftings on triangles.

Typical use::

    from equiflux import structured_square, ProblemData, solve_primal, Equilibrator, estimate

    mesh, part = structured_square(8, "D")
    data = ProblemData(f=1.0, xi=None, partition=part)
    uh = solve_primal(data, mesh, 2)
    sigma, _ = Equilibrator(mesh, data, uh, 2).flux()
    report = estimate(sigma, data, uh)
"""

from .equilibration import Equilibrator, assemble_flux, verify_equilibration
from .errors import IncompatibleDataError, MeshError, SolverError
from .estimator import EstimatorReport, estimate
from .lifting import LiftResult, WeightedLiftConfig, lift, lift_weighted, stability_ratio
from .linsolve import SaddleSystem, solve_saddle, solve_spd
from .mesh import BoundaryPartition, Mesh, build_mesh, refine_uniform, structured_square, vertex_patch
from .polyspace import PiecewisePoly, RTNField, project_rtn, project_scalar, project_vector
from .primal import PrimalSolution, ProblemData, solve_primal
from .quadrature import quad_rule

__version__ = "0.1.0"

__all__ = [
    "BoundaryPartition", "Equilibrator", "EstimatorReport", "IncompatibleDataError", "LiftResult", "Mesh",
    "MeshError", "PiecewisePoly", "PrimalSolution", "ProblemData", "RTNField", "SaddleSystem", "SolverError",
    "WeightedLiftConfig", "assemble_flux", "build_mesh", "estimate", "lift", "lift_weighted", "project_rtn",
    "project_scalar", "project_vector", "quad_rule", "refine_uniform", "solve_primal", "solve_saddle",
    "solve_spd", "stability_ratio", "structured_square", "verify_equilibration", "vertex_patch",
]
