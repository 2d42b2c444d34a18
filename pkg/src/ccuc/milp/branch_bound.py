"""Best-bound branch and bound over binary variables.

Branching picks the most fractional binary (ties to the lowest index); the
open node with the smallest parent bound is expanded next, deeper nodes first
on ties. Every node LP is solved from scratch, which keeps runs reproducible.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time

import numpy as np

from .program import ProgramArrays, SolveResult, SolverOptions, Status
from .simplex import solve_dense


def relative_gap(incumbent: float, bound: float) -> float:
    return abs(incumbent - bound) / (1e-10 + abs(incumbent))


def gap_closed(incumbent: float, bound: float, options: SolverOptions) -> bool:
    return incumbent - bound <= options.abs_gap or relative_gap(incumbent, bound) <= options.rel_gap


def branch_and_bound(arrays: ProgramArrays, options: SolverOptions) -> SolveResult:
    start = time.perf_counter()
    deadline = start + options.time_limit
    sign = -1.0 if arrays.maximize else 1.0
    c = sign * arrays.c
    A = arrays.A.toarray()
    senses, b = arrays.senses, arrays.b
    integer = np.flatnonzero(arrays.integer)
    k0 = sign * arrays.obj_const
    itol = options.integrality_tol

    incumbent_x: np.ndarray | None = None
    incumbent = math.inf
    counter = itertools.count()
    heap: list = [(-math.inf, 0, next(counter), arrays.lb.copy(), arrays.ub.copy())]
    nodes = 0
    iterations = 0
    timed_out = False

    def prune_tol(value: float) -> float:
        return 1e-9 * (1.0 + abs(value))

    while heap:
        if time.perf_counter() > deadline:
            timed_out = True
            break
        if incumbent_x is not None and gap_closed(incumbent + k0, heap[0][0] + k0, options):
            break
        parent_bound, neg_depth, _, lb, ub = heapq.heappop(heap)
        if parent_bound >= incumbent - prune_tol(incumbent):
            continue
        outcome = solve_dense(c, A, senses, b, lb, ub,
                              feasibility_tol=options.feasibility_tol, deadline=deadline)
        nodes += 1
        iterations += outcome.iterations
        if outcome.status == Status.TIME_LIMIT:
            heapq.heappush(heap, (parent_bound, neg_depth, next(counter), lb, ub))
            timed_out = True
            break
        if outcome.status == Status.INFEASIBLE:
            continue
        if outcome.status == Status.UNBOUNDED:
            if nodes == 1:
                return SolveResult(Status.UNBOUNDED, nodes=nodes, iterations=iterations,
                                   runtime=time.perf_counter() - start)
            continue
        obj = outcome.objective
        if obj >= incumbent - prune_tol(incumbent):
            continue
        x = outcome.x
        frac = np.abs(x[integer] - np.round(x[integer])) if len(integer) else np.zeros(0)
        if not np.any(frac > itol):
            x = x.copy()
            x[integer] = np.round(x[integer])
            incumbent_x = x
            incumbent = float(c @ x)
            continue
        score = np.where(frac > itol, 0.5 - np.abs(frac - 0.5), -1.0)
        j = int(integer[int(np.argmax(score))])  # argmax returns the first (lowest id) tie
        down_ub = ub.copy()
        down_ub[j] = math.floor(x[j])
        up_lb = lb.copy()
        up_lb[j] = math.ceil(x[j])
        depth = neg_depth - 1
        heapq.heappush(heap, (obj, depth, next(counter), lb.copy(), down_ub))
        heapq.heappush(heap, (obj, depth, next(counter), up_lb, ub.copy()))

    runtime = time.perf_counter() - start
    open_bounds = [h[0] for h in heap if h[0] < incumbent - prune_tol(incumbent)]
    bound = min(open_bounds) if open_bounds else incumbent
    if incumbent_x is None:
        status = Status.TIME_LIMIT if timed_out else Status.INFEASIBLE
        return SolveResult(status, nodes=nodes, iterations=iterations, runtime=runtime,
                           bound=sign * bound if math.isfinite(bound) else math.nan)
    if timed_out and open_bounds:
        status = Status.TIME_LIMIT
    elif open_bounds:
        status = Status.GAP_LIMIT
    else:
        status = Status.OPTIMAL
        bound = incumbent
    obj = sign * incumbent + arrays.obj_const
    return SolveResult(
        status,
        objective=obj,
        x=incumbent_x,
        bound=sign * bound + arrays.obj_const,
        gap=relative_gap(incumbent + k0, bound + k0),
        nodes=nodes,
        iterations=iterations,
        runtime=runtime,
    )
