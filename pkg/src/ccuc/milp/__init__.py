"""Linear / mixed-binary programming core: modelling layer, solvers, backends."""

import numpy as np

from .backends import (
    HighsBackend,
    ReferenceBackend,
    available_backends,
    get_backend,
    register_backend,
    solve_lp,
    solve_milp,
)
from .program import (
    BINARY,
    CONTINUOUS,
    EQ,
    GE,
    LE,
    Constraint,
    LinExpr,
    Program,
    SolveResult,
    SolverError,
    SolverOptions,
    Status,
    Var,
    quicksum,
)


def dual_objective(program: Program, result: SolveResult) -> float:
    """Dual objective ``b @ y`` plus the bound terms carried by the reduced costs."""
    arr = program.to_arrays()
    y = result.duals
    rc = result.reduced_costs
    val = float(arr.b @ y) + arr.obj_const
    at_lower = rc > 0 if not arr.maximize else rc < 0
    at = np.where(at_lower, arr.lb, arr.ub)
    active = (np.abs(rc) > 1e-12) & np.isfinite(at)
    val += float(np.sum(rc[active] * at[active]))
    return val

__all__ = [
    "BINARY", "CONTINUOUS", "EQ", "GE", "LE", "Constraint", "HighsBackend", "LinExpr",
    "Program", "ReferenceBackend", "SolveResult", "SolverError", "SolverOptions", "Status",
    "Var", "available_backends", "dual_objective", "get_backend", "quicksum",
    "register_backend", "solve_lp", "solve_milp",
]
