"""Backend registry.

A backend is any object with a ``name`` and ``solve_lp(program, options)`` /
``solve_milp(program, options)`` methods returning :class:`SolveResult`.
``reference`` (the in-house simplex and branch and bound) is always present;
``highs`` wraps SciPy's HiGHS interface for larger models and cross-checks.
"""

from __future__ import annotations

import os
import threading
import time

import numpy as np
import scipy.optimize as so

from .branch_bound import branch_and_bound
from .program import EQ, GE, LE, Program, SolveResult, SolverError, SolverOptions, Status
from .simplex import solve_dense

DEFAULT_BACKEND_ENV = "CCUC_BACKEND"


class ReferenceBackend:
    name = "reference"

    def solve_lp(self, program: Program, options: SolverOptions) -> SolveResult:
        if program.is_mip:
            raise SolverError("solve_lp called on a program with binary variables")
        arr = program.to_arrays()
        start = time.perf_counter()
        sign = -1.0 if arr.maximize else 1.0
        out = solve_dense(sign * arr.c, arr.A.toarray(), arr.senses, arr.b, arr.lb, arr.ub,
                          feasibility_tol=options.feasibility_tol,
                          deadline=start + options.time_limit)
        res = SolveResult(out.status, iterations=out.iterations,
                          runtime=time.perf_counter() - start, backend=self.name)
        if out.status == Status.OPTIMAL:
            res.x = out.x
            res.objective = sign * out.objective + arr.obj_const
            res.duals = sign * out.duals
            res.reduced_costs = sign * out.reduced_costs
            res.bound = res.objective
            res.gap = 0.0
        return res

    def solve_milp(self, program: Program, options: SolverOptions) -> SolveResult:
        if not program.is_mip:
            return self.solve_lp(program, options)
        res = branch_and_bound(program.to_arrays(), options)
        res.backend = self.name
        return res


class HighsBackend:
    """SciPy/HiGHS wrapper with the same result conventions as the reference."""

    name = "highs"

    @staticmethod
    def _split(arr):
        A = arr.A.tocsr()
        le = np.flatnonzero(arr.senses == LE)
        ge = np.flatnonzero(arr.senses == GE)
        eq = np.flatnonzero(arr.senses == EQ)
        return A, le, ge, eq

    def solve_lp(self, program: Program, options: SolverOptions) -> SolveResult:
        if program.is_mip:
            raise SolverError("solve_lp called on a program with binary variables")
        arr = program.to_arrays()
        sign = -1.0 if arr.maximize else 1.0
        A, le, ge, eq = self._split(arr)
        ub_rows = np.concatenate([le, ge])
        A_ub = A[ub_rows].multiply(np.where(np.isin(ub_rows, ge), -1.0, 1.0)[:, None]).tocsr() \
            if len(ub_rows) else None
        b_ub = np.concatenate([arr.b[le], -arr.b[ge]]) if len(ub_rows) else None
        bounds = [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi)
                  for lo, hi in zip(arr.lb, arr.ub)]
        opts = {"primal_feasibility_tolerance": options.feasibility_tol,
                "dual_feasibility_tolerance": options.feasibility_tol}
        if np.isfinite(options.time_limit):
            opts["time_limit"] = options.time_limit
        start = time.perf_counter()
        r = so.linprog(sign * arr.c, A_ub=A_ub, b_ub=b_ub,
                       A_eq=A[eq] if len(eq) else None, b_eq=arr.b[eq] if len(eq) else None,
                       bounds=bounds, method="highs", options=opts)
        runtime = time.perf_counter() - start
        status = {0: Status.OPTIMAL, 1: Status.TIME_LIMIT, 2: Status.INFEASIBLE,
                  3: Status.UNBOUNDED}.get(r.status)
        if status is None:
            raise SolverError(f"HiGHS LP failure: {r.message}")
        res = SolveResult(status, runtime=runtime, iterations=int(getattr(r, "nit", 0)),
                          backend=self.name, message=r.message)
        if status == Status.OPTIMAL:
            y = np.zeros(program.num_rows)
            if len(ub_rows):
                marg = r.ineqlin.marginals
                y[le] = marg[: len(le)]
                y[ge] = -marg[len(le):]
            if len(eq):
                y[eq] = r.eqlin.marginals
            res.x = np.asarray(r.x, dtype=float)
            res.objective = float(arr.c @ res.x + arr.obj_const)
            res.duals = sign * y
            res.reduced_costs = arr.c - A.T @ res.duals
            res.bound = res.objective
            res.gap = 0.0
        return res

    def solve_milp(self, program: Program, options: SolverOptions) -> SolveResult:
        if not program.is_mip:
            return self.solve_lp(program, options)
        arr = program.to_arrays()
        sign = -1.0 if arr.maximize else 1.0
        lo = np.where(arr.senses == LE, -np.inf, arr.b)
        hi = np.where(arr.senses == GE, np.inf, arr.b)
        constraints = [so.LinearConstraint(arr.A, lo, hi)] if program.num_rows else []
        opts = {"mip_rel_gap": options.rel_gap}
        if np.isfinite(options.time_limit):
            opts["time_limit"] = options.time_limit
        start = time.perf_counter()
        r = so.milp(sign * arr.c, constraints=constraints, integrality=arr.integer.astype(int),
                    bounds=so.Bounds(arr.lb, arr.ub), options=opts)
        runtime = time.perf_counter() - start
        if r.status == 2:
            return SolveResult(Status.INFEASIBLE, runtime=runtime, backend=self.name, message=r.message)
        if r.status == 3:
            return SolveResult(Status.UNBOUNDED, runtime=runtime, backend=self.name, message=r.message)
        if r.status not in (0, 1):
            raise SolverError(f"HiGHS MILP failure: {r.message}")
        if r.x is None:
            return SolveResult(Status.TIME_LIMIT, runtime=runtime, backend=self.name, message=r.message)
        x = np.asarray(r.x, dtype=float)
        x[arr.integer] = np.round(x[arr.integer])
        obj = float(arr.c @ x + arr.obj_const)
        bound = getattr(r, "mip_dual_bound", None)
        bound = obj if bound is None or not np.isfinite(bound) else sign * float(bound) + arr.obj_const
        gap = abs(obj - bound) / (1e-10 + abs(obj))
        status = Status.OPTIMAL if r.status == 0 else Status.TIME_LIMIT
        return SolveResult(status, objective=obj, x=x, bound=bound, gap=gap, runtime=runtime,
                           backend=self.name, message=r.message)


_REGISTRY: dict[str, object] = {}
_LOCK = threading.Lock()


def register_backend(backend, name: str | None = None) -> str:
    """Make ``backend`` selectable by name; duplicate names are rejected."""
    name = name or getattr(backend, "name", None)
    if not name:
        raise ValueError("backend needs a name")
    for attr in ("solve_lp", "solve_milp"):
        if not callable(getattr(backend, attr, None)):
            raise TypeError(f"backend {name!r} lacks {attr}()")
    with _LOCK:
        if name in _REGISTRY:
            raise ValueError(f"backend {name!r} is already registered")
        _REGISTRY[name] = backend
    return name


def get_backend(name: str | None = None):
    name = name or os.environ.get(DEFAULT_BACKEND_ENV) or "reference"
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(_REGISTRY)}") from None


def available_backends() -> list[str]:
    return sorted(_REGISTRY)


def solve_lp(program: Program, options: SolverOptions | None = None, backend=None) -> SolveResult:
    be = backend if hasattr(backend, "solve_lp") else get_backend(backend)
    return be.solve_lp(program, options or SolverOptions())


def solve_milp(program: Program, options: SolverOptions | None = None, backend=None) -> SolveResult:
    be = backend if hasattr(backend, "solve_milp") else get_backend(backend)
    return be.solve_milp(program, options or SolverOptions())


register_backend(ReferenceBackend())
register_backend(HighsBackend())
