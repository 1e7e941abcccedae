"""Residual-minimizing isogeometric solvers for advection-diffusion-reaction.

Trial and test spaces are tensor-product B-splines on the unit square; the
discrete problem minimizes the residual in a dual norm induced by a Gramm
matrix on the test space, giving a symmetric saddle-point system.
"""

from .assembly import MixedSolution, SaddleSystem, assemble, dump_system, solve
from .bspline import KnotVector, evaluate_basis, evaluate_basis_array, make_open_knot_vector
from .exceptions import (
    ConfigurationError,
    ContractError,
    DomainError,
    GrammDefinitenessError,
    RankDeficiencyError,
    SolverError,
)
from .forms import FORMULATIONS, GrammSpec, ProblemData, build_spaces, get_formulation
from .quadrature import EvalCache, Mesh, build_mesh, make_quadrature
from .tensor_space import DiscreteSpace, make_scalar_space, make_vector_space
from .verification import fit_rates, manufactured_case, run_single

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ContractError",
    "DiscreteSpace",
    "DomainError",
    "EvalCache",
    "FORMULATIONS",
    "GrammDefinitenessError",
    "GrammSpec",
    "KnotVector",
    "Mesh",
    "MixedSolution",
    "ProblemData",
    "RankDeficiencyError",
    "SaddleSystem",
    "SolverError",
    "assemble",
    "build_mesh",
    "build_spaces",
    "dump_system",
    "evaluate_basis",
    "evaluate_basis_array",
    "fit_rates",
    "get_formulation",
    "make_open_knot_vector",
    "make_quadrature",
    "make_scalar_space",
    "make_vector_space",
    "manufactured_case",
    "run_single",
    "solve",
]
