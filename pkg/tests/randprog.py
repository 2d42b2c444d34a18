"""Random small LP / MILP generators and brute-force references for the solver tests."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog

from ccuc.milp import BINARY, EQ, GE, LE, Program, quicksum


def random_lp(rng: np.random.Generator, maximize: bool | None = None):
    """Feasible, bounded LP over ``x >= 0`` with mixed row senses."""
    n = int(rng.integers(2, 7))
    m = int(rng.integers(1, 6))
    A = np.round(rng.normal(size=(m, n)), 2)
    x0 = np.round(rng.uniform(0, 3, n), 2)
    senses = rng.choice([LE, GE, EQ], size=m, p=[0.5, 0.3, 0.2])
    b = A @ x0
    b = np.where(senses == LE, b + rng.uniform(0, 2, m), np.where(senses == GE, b - rng.uniform(0, 2, m), b))
    b = np.round(b, 6)
    prog = Program("rand")
    xs = [prog.add_var(name=f"x{j}") for j in range(n)]
    for i in range(m):
        prog.add_constr(_row(A[i], xs, senses[i], b[i]))
    # a budget row keeps every objective bounded
    prog.add_constr(quicksum(xs) <= float(x0.sum() + 5.0))
    c = np.round(rng.normal(size=n), 2)
    maximize = bool(rng.integers(2)) if maximize is None else maximize
    (prog.maximize if maximize else prog.minimize)(quicksum(float(c[j]) * xs[j] for j in range(n)))
    return prog


def _row(a, xs, sense, rhs):
    expr = quicksum(float(a[j]) * xs[j] for j in range(len(xs)) if a[j] != 0.0)
    if sense == LE:
        return expr <= float(rhs)
    if sense == GE:
        return expr >= float(rhs)
    return expr == float(rhs)


def random_milp(rng: np.random.Generator):
    """Small mixed-binary program (knapsack-like with a continuous part)."""
    nb = int(rng.integers(2, 7))
    nc = int(rng.integers(0, 4))
    prog = Program("rand_milp")
    ys = [prog.add_var(kind=BINARY, name=f"y{j}") for j in range(nb)]
    xs = [prog.add_var(ub=float(rng.uniform(1, 5)), name=f"x{j}") for j in range(nc)]
    allv = ys + xs
    for _ in range(int(rng.integers(1, 4))):
        a = np.round(rng.uniform(0.5, 4.0, len(allv)), 2)
        cap = float(np.round(a.sum() * rng.uniform(0.3, 0.8), 2))
        prog.add_constr(quicksum(float(a[j]) * allv[j] for j in range(len(allv))) <= cap)
    if nc and rng.integers(2):
        # link continuous part to binaries: x_j <= 4 y_j
        for j, x in enumerate(xs):
            prog.add_constr(x - 4.0 * ys[j % nb] <= 0)
    c = np.round(rng.uniform(-5, 1, len(allv)), 2)
    prog.minimize(quicksum(float(c[j]) * allv[j] for j in range(len(allv))))
    return prog


def brute_force_milp(prog: Program) -> float | None:
    """Optimum by enumerating all binaries and solving each LP with scipy (min or max)."""
    arr = prog.to_arrays()
    ints = np.flatnonzero(arr.integer)
    A = arr.A.toarray()
    sign = -1.0 if arr.maximize else 1.0
    best = None
    for combo in itertools.product((0.0, 1.0), repeat=len(ints)):
        lb, ub = arr.lb.copy(), arr.ub.copy()
        lb[ints] = ub[ints] = combo
        le = arr.senses == LE
        ge = arr.senses == GE
        eq = arr.senses == EQ
        A_ub = np.vstack([A[le], -A[ge]])
        b_ub = np.concatenate([arr.b[le], -arr.b[ge]])
        r = linprog(sign * arr.c, A_ub=A_ub if len(A_ub) else None, b_ub=b_ub if len(b_ub) else None,
                    A_eq=A[eq] if eq.any() else None, b_eq=arr.b[eq] if eq.any() else None,
                    bounds=list(zip(lb, [None if np.isinf(u) else u for u in ub])), method="highs")
        if r.status == 0:
            val = sign * r.fun + arr.obj_const
            if best is None or sign * val < sign * best:
                best = val
    return best
