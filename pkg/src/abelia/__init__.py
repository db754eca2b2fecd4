"""Design-time checking of typed computation graphs.

Dimensions, Clifford grades, numeric ranges and escape scopes are inferred
for every node before anything runs.
"""

from .clifford import CayleyTable, Multivector, Signature, build_cayley, grade_product_set, sparsity_count
from .coherence import Categorical, DiagGaussian, accept_consultation, kl, validate_typed_response
from .diff import check_closure, derive_tangent_graph, evaluate_forward, finite_difference_check
from .dims import SI, SI_BASE, Basis, Dimension, DimensionError, format_dimension, parse_dimension
from .graph import Config, ElaborationReport, Graph, SpecError, elaborate, format_report, load_spec
from .mdl import description_length, mdl_verify
from .numeric import ExactAccumulator, drift_probe, exact_dot, naive_dot
from .unify import DimEquation, Substitution, UnifyError, solve_system, unify

__version__ = "0.1.0"

__all__ = [
    "SI", "SI_BASE", "Basis", "CayleyTable", "Categorical", "Config", "DiagGaussian", "DimEquation",
    "Dimension", "DimensionError", "ElaborationReport", "ExactAccumulator", "Graph", "Multivector",
    "Signature", "SpecError", "Substitution", "UnifyError", "accept_consultation", "build_cayley",
    "check_closure", "derive_tangent_graph", "description_length", "drift_probe", "elaborate",
    "evaluate_forward", "exact_dot", "finite_difference_check", "format_dimension", "format_report",
    "grade_product_set", "kl", "load_spec", "mdl_verify", "naive_dot", "parse_dimension",
    "solve_system", "sparsity_count", "unify", "validate_typed_response",
]
