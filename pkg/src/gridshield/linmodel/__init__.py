from .lpformat import to_lp
from .model import INF, Constraint, LinExpr, Model, ModelError, Var, as_expr
from .solve import (INFEASIBLE, LIMIT, OPTIMAL, UNBOUNDED, BackendError, BranchAndBoundBackend,
                    HighsBackend, ScipyHighsBackend, SolveResult, SolverParams, get_backend,
                    solve)

__all__ = [
    "INF", "Constraint", "LinExpr", "Model", "ModelError", "Var", "as_expr", "to_lp",
    "INFEASIBLE", "LIMIT", "OPTIMAL", "UNBOUNDED", "BackendError", "BranchAndBoundBackend",
    "HighsBackend", "ScipyHighsBackend", "SolveResult", "SolverParams", "get_backend", "solve",
]
