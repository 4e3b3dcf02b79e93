"""P1/P2 Lagrange finite elements on triangle meshes."""
from .assembly import (SolverError, SparseSystem, adj, assemble_matrix, assemble_vector, ddot, det, dot,
                       identity_like, integrate, matmul, matvec, solve, solve_matrix, sym, trace, transpose)
from .norms import error_norms, mean_value
from .quadrature import line_rule, triangle_rule
from .space import FeFunction, MeshMismatchError, Space

__all__ = [
    "FeFunction", "MeshMismatchError", "Space", "SolverError", "SparseSystem",
    "adj", "assemble_matrix", "assemble_vector", "ddot", "det", "dot", "error_norms",
    "identity_like", "integrate", "line_rule", "matmul", "matvec", "mean_value", "solve",
    "solve_matrix", "sym", "trace", "transpose", "triangle_rule",
]
