"""Solution strategies for contingency-constrained unit commitment.

``ef``
    One monolithic MILP with a recourse block per (contingency, period).
``bd``
    Benders: solve the master, check every (contingency, period), add every
    violated feasibility cut, repeat.
``csa1``
    Like ``bd`` but the separation oracle is the worst-case contingency MILP
    solved for every failure budget ``j`` and period.
``csa2``
    Screens a growing list of known-bad contingencies first and calls the
    worst-case oracle only when the list is clean; each newly found
    contingency is immediately checked in every other period.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .buc import CommitmentSolution, CutPool, MasterProblem, extract_solution
from .contingency import (
    Contingency,
    DynamicContingencyList,
    FeasibilityCheck,
    add_recourse_block,
    check_feasibility,
    enumerate_contingencies,
    instance_contingency_count,
    make_cut,
    violation_tolerance,
)
from .milp import SolverOptions, Status, solve_milp
from .model import Instance
from .psip import BigMPolicy, PsipError, PsipQuery, PsipResult, solve_psip

log = logging.getLogger("ccuc")

ALGORITHMS = ("ef", "bd", "csa1", "csa2")
REPORT_VERSION = 1


class BuildCapExceeded(RuntimeError):
    """Too many (contingency, period) blocks to build or enumerate."""


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "csa2"
    options: SolverOptions = SolverOptions()
    time_limit: float = 10_800.0
    workers: int = 1
    big_m: BigMPolicy = BigMPolicy()
    backend: str | None = None
    sub_backend: str | None = None
    ef_block_cap: int = 5_000
    enumeration_cap: int = 100_000
    max_iterations: int = 100_000

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def subproblem_backend(self):
        return self.sub_backend or self.backend


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    bound: float
    master_status: str
    screened: int = 0
    screen_violations: int = 0
    psip_solves: int = 0
    cf_solves: int = 0
    cuts_added: int = 0
    new_contingencies: list[str] = field(default_factory=list)
    list_size: int = 0
    max_violation: float = 0.0
    rmp_time: float = 0.0
    psip_time: float = 0.0
    dcf_time: float = 0.0


@dataclass
class RunReport:
    algorithm: str
    status: str
    objective: float = math.nan
    solution: CommitmentSolution | None = None
    iterations: int = 0
    contingency_list: list[Contingency] = field(default_factory=list)
    cuts: int = 0
    times: dict[str, float] = field(default_factory=lambda: {"rmp": 0.0, "psip": 0.0, "dcf": 0.0, "total": 0.0})
    trace: list[IterationRecord] = field(default_factory=list)
    master_gap: float = math.nan
    feasibility_gap: float = math.nan
    psip_solves: int = 0
    cf_solves: int = 0
    message: str = ""
    instance_name: str = ""
    k: int = 0
    epsilon: tuple[float, ...] = ()
    # in-memory diagnostics, not serialized
    cut_pool: CutPool | None = field(default=None, repr=False)
    psip_results: list[PsipResult] = field(default_factory=list, repr=False)

    @property
    def list_size(self) -> int:
        return len(self.contingency_list)

    def committed(self, t: int = 0) -> tuple[int, ...]:
        return () if self.solution is None else self.solution.committed(t)

    def to_dict(self, instance: Instance | None = None, timings: bool = True) -> dict:
        sol = self.solution
        out = {
            "report_version": REPORT_VERSION,
            "instance": self.instance_name,
            "algorithm": self.algorithm,
            "k": self.k,
            "epsilon": list(self.epsilon),
            "status": self.status,
            "objective": None if math.isnan(self.objective) else self.objective,
            "master_gap": None if math.isnan(self.master_gap) else self.master_gap,
            "feasibility_gap": None if math.isnan(self.feasibility_gap) else self.feasibility_gap,
            "iterations": self.iterations,
            "cuts": self.cuts,
            "list_size": self.list_size,
            "contingency_list": [c.to_dict() for c in self.contingency_list],
            "psip_solves": self.psip_solves,
            "cf_solves": self.cf_solves,
            "message": self.message,
            "solution": None if sol is None else sol.to_dict(instance),
            "trace": [_record_dict(r, timings) for r in self.trace],
        }
        if timings:
            out["times"] = dict(self.times)
        return out

    def to_json(self, instance: Instance | None = None, timings: bool = True) -> str:
        return json.dumps(self.to_dict(instance, timings), indent=2)

    def table(self) -> str:
        """Fixed-width run summary: RMP, PSIP, DCF seconds, then itr, |L|, cuts."""
        head = f"{'RMP':>10} {'PSIP':>10} {'DCF':>10} {'itr':>6} {'|L|':>6} {'cuts':>6}"
        row = (f"{self.times['rmp']:>10.2f} {self.times['psip']:>10.2f} {self.times['dcf']:>10.2f} "
               f"{self.iterations:>6d} {self.list_size:>6d} {self.cuts:>6d}")
        return head + "\n" + row + "\n"


def _record_dict(r: IterationRecord, timings: bool) -> dict:
    d = dict(r.__dict__)
    if not timings:
        for key in ("rmp_time", "psip_time", "dcf_time"):
            d.pop(key)
    for key in ("objective", "bound"):
        if isinstance(d[key], float) and math.isnan(d[key]):
            d[key] = None
    return d


# -- helpers ---------------------------------------------------------------------


class _Clock:
    def __init__(self, limit: float):
        self.start = time.perf_counter()
        self.deadline = self.start + limit

    def remaining(self) -> float:
        return self.deadline - time.perf_counter()

    def expired(self) -> bool:
        return time.perf_counter() >= self.deadline


def _map(fn, items: list, workers: int) -> list:
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _all_contingencies(instance: Instance) -> list[Contingency]:
    out: list[Contingency] = []
    for j in range(1, instance.reliability.k + 1):
        out.extend(enumerate_contingencies(instance, j))
    return out


def _rel_violation(instance: Instance, check: FeasibilityCheck) -> float:
    return check.violation / max(instance.demand.total(check.period), 1e-12)


class _OutOfTime(Exception):
    """A subproblem ran out of the run's time budget."""


class _Run:
    """State shared by the decomposition algorithms."""

    def __init__(self, instance: Instance, config: RunConfig):
        self.inst = instance
        self.cfg = config
        self.clock = _Clock(config.time_limit)
        self.pool = CutPool()
        self.master = MasterProblem(instance)
        rel = instance.reliability
        self.report = RunReport(config.algorithm, "time_limit", instance_name=instance.name,
                                k=rel.k, epsilon=tuple(rel.epsilon))
        self.solution: CommitmentSolution | None = None
        self.record: IterationRecord | None = None

    def options(self) -> SolverOptions:
        return replace(self.cfg.options, time_limit=max(self.clock.remaining(), 1e-3))

    def solve_master(self, iteration: int) -> bool:
        """Solve the master; False when the run must stop (infeasible or out of time)."""
        self.master.sync(self.pool)
        t0 = time.perf_counter()
        res = self.master.solve(self.options(), self.cfg.backend)
        dt = time.perf_counter() - t0
        self.report.times["rmp"] += dt
        rec = IterationRecord(iteration, res.objective, res.bound, res.status.value, rmp_time=dt)
        self.report.trace.append(rec)
        self.record = rec
        self.report.iterations = iteration
        self.report.master_gap = res.gap
        if res.status == Status.INFEASIBLE:
            self.report.status = "infeasible"
            self.report.message = "master problem infeasible: no commitment can meet the criterion"
            self.solution = None
            return False
        if not res.has_solution:
            self.report.status = "time_limit"
            self.report.message = "time limit reached before the master found an incumbent"
            return False
        self.solution = extract_solution(res, self.inst, self.master)
        log.info("iter %d master %s obj %.4f", iteration, res.status.value, res.objective)
        if res.status == Status.TIME_LIMIT:
            self.master_timed_out = True
        return True

    def check(self, pairs: list[tuple[Contingency, int]]) -> list[FeasibilityCheck]:
        sol = self.solution
        be, opts = self.cfg.subproblem_backend, self.cfg.options

        def one(pair):
            c, t = pair
            return check_feasibility(self.inst, sol.x[:, t], sol.dispatch[:, t], c, t, opts, be)

        t0 = time.perf_counter()
        out: list[FeasibilityCheck] = []
        chunk = max(16, 4 * self.cfg.workers)
        for s in range(0, len(pairs), chunk):
            if self.clock.expired():
                self.timed_out = True
                break
            out.extend(_map(one, pairs[s:s + chunk], self.cfg.workers))
        dt = time.perf_counter() - t0
        self.report.times["dcf"] += dt
        self.record.dcf_time += dt
        self.record.cf_solves += len(out)
        self.report.cf_solves += len(out)
        return out

    def add_cuts(self, checks: Iterable[FeasibilityCheck], iteration: int) -> int:
        added = 0
        for chk in checks:
            if chk.feasible:
                continue
            self.record.max_violation = max(self.record.max_violation, _rel_violation(self.inst, chk))
            if self.pool.add(make_cut(chk, self.inst), iteration):
                added += 1
        self.record.cuts_added += added
        self.report.cuts = len(self.pool)
        return added

    def psip(self, j: int, t: int) -> PsipResult:
        sol = self.solution
        t0 = time.perf_counter()
        try:
            res = solve_psip(self.inst, PsipQuery.from_solution(sol, j, t), self.cfg.big_m,
                             self.options(), self.cfg.subproblem_backend)
        except PsipError:
            if self.clock.expired():
                raise _OutOfTime from None
            raise
        finally:
            self.report.times["psip"] += time.perf_counter() - t0
        dt = time.perf_counter() - t0
        self.record.psip_time += dt
        self.record.psip_solves += 1
        self.report.psip_solves += 1
        self.report.psip_results.append(res)
        return res

    def stalled(self, violations: list[FeasibilityCheck]) -> None:
        """Violations were found but every cut was already pooled (numerical noise)."""
        worst = max(_rel_violation(self.inst, v) for v in violations)
        if worst > 1e-5:
            raise EngineError(f"separation repeats pooled cuts while violation {worst:.3g} remains")
        self.report.message = f"stopped on repeated cuts; residual relative violation {worst:.2e}"

    def finish(self, status: str) -> RunReport:
        rep = self.report
        if getattr(self, "master_timed_out", False) and status == "optimal":
            status = "compliant_at_limit"
        rep.status = status
        rep.solution = self.solution
        if self.solution is not None:
            rep.objective = self.solution.objective
        if status in ("optimal", "compliant_at_limit"):
            rep.feasibility_gap = 0.0 if math.isnan(rep.feasibility_gap) else rep.feasibility_gap
        rep.cuts = len(self.pool)
        rep.cut_pool = self.pool
        rep.times["total"] = time.perf_counter() - self.clock.start
        return rep


# -- algorithms --------------------------------------------------------------------


def solve_bd(instance: Instance, config: RunConfig | None = None) -> RunReport:
    config = replace(config or RunConfig(), algorithm="bd")
    count = instance_contingency_count(instance)
    if count > config.enumeration_cap:
        raise BuildCapExceeded(f"{count} contingencies exceed the enumeration cap {config.enumeration_cap}")
    run = _Run(instance, config)
    conts = _all_contingencies(instance)
    pairs = [(c, t) for c in conts for t in range(instance.periods)]
    for it in range(1, config.max_iterations + 1):
        if not run.solve_master(it):
            return run.finish(run.report.status)
        if run.clock.expired():
            break
        run.timed_out = False
        checks = run.check(pairs)
        bad = [c for c in checks if not c.feasible]
        added = run.add_cuts(bad, it)
        worst = max((_rel_violation(instance, c) for c in bad), default=0.0)
        run.report.feasibility_gap = worst
        if run.timed_out:
            break
        if not bad:
            return run.finish("optimal")
        if added == 0:
            run.stalled(bad)
            return run.finish("optimal")
    run.report.message = run.report.message or "time limit reached"
    return run.finish("time_limit")


def solve_csa1(instance: Instance, config: RunConfig | None = None) -> RunReport:
    config = replace(config or RunConfig(), algorithm="csa1")
    run = _Run(instance, config)
    try:
        return _csa1(run)
    except _OutOfTime:
        run.report.message = "time limit reached during a worst-case contingency solve"
        return run.finish("time_limit")


def _csa1(run: "_Run") -> RunReport:
    instance, config = run.inst, run.cfg
    k, T = instance.reliability.k, instance.periods
    for it in range(1, config.max_iterations + 1):
        if not run.solve_master(it):
            return run.finish(run.report.status)
        jobs = [(j, t) for j in range(1, k + 1) for t in range(T)]
        results = _map(lambda jt: run.psip(*jt), jobs, config.workers) if not run.clock.expired() else []
        if len(results) < len(jobs) or run.clock.expired():
            break
        positive = [(r.contingency, r.period) for r in results
                    if r.contingency is not None and r.objective > violation_tolerance(instance, r.period, config.options)]
        if not positive:
            run.report.feasibility_gap = 0.0
            return run.finish("optimal")
        checks = run.check(positive)
        bad = [c for c in checks if not c.feasible]
        run.report.feasibility_gap = max((_rel_violation(instance, c) for c in bad), default=0.0)
        if not bad:
            # oracle and recourse LP disagree only within tolerance
            return run.finish("optimal")
        if run.add_cuts(bad, it) == 0:
            run.stalled(bad)
            return run.finish("optimal")
    run.report.message = run.report.message or "time limit reached"
    return run.finish("time_limit")


def solve_csa2(instance: Instance, config: RunConfig | None = None) -> RunReport:
    config = replace(config or RunConfig(), algorithm="csa2")
    run = _Run(instance, config)
    try:
        return _csa2(run)
    except _OutOfTime:
        run.report.contingency_list = list(run.clist)
        run.report.message = "time limit reached during a worst-case contingency solve"
        return run.finish("time_limit")


def _csa2(run: "_Run") -> RunReport:
    instance, config = run.inst, run.cfg
    k, T = instance.reliability.k, instance.periods
    L = run.clist = DynamicContingencyList()
    for it in range(1, config.max_iterations + 1):
        if not run.solve_master(it):
            run.report.contingency_list = list(L)
            return run.finish(run.report.status)
        rec = run.record
        run.timed_out = False
        checks = run.check([(c, t) for c in L for t in range(T)])
        rec.screened = len(checks)
        bad = [c for c in checks if not c.feasible]
        rec.screen_violations = len(bad)
        if run.timed_out or run.clock.expired():
            break
        if bad:
            run.report.feasibility_gap = max(_rel_violation(instance, c) for c in bad)
            if run.add_cuts(bad, it) == 0:
                run.stalled(bad)
                break_status = "optimal"
                run.report.contingency_list = list(L)
                return run.finish(break_status)
            rec.list_size = len(L)
            continue
        found: list[PsipResult] = []
        for j in range(1, k + 1):
            if config.workers > 1:
                batch = _map(lambda t: run.psip(j, t), list(range(T)), config.workers)
            else:
                batch = []
                for t in range(T):
                    if run.clock.expired():
                        break
                    r = run.psip(j, t)
                    batch.append(r)
                    if r.contingency is not None and r.objective > violation_tolerance(instance, t, config.options):
                        break
            found = [r for r in batch if r.contingency is not None
                     and r.objective > violation_tolerance(instance, r.period, config.options)]
            if found or run.clock.expired():
                break
        if run.clock.expired() and not found:
            break
        if not found:
            run.report.feasibility_gap = 0.0
            rec.list_size = len(L)
            run.report.contingency_list = list(L)
            return run.finish("optimal")
        new_checks: list[FeasibilityCheck] = []
        for r in found:
            if L.append(r.contingency):
                rec.new_contingencies.append(r.contingency.label(instance))
            new_checks.extend(run.check([(r.contingency, t) for t in range(T)]))
        bad = [c for c in new_checks if not c.feasible]
        run.report.feasibility_gap = max((_rel_violation(instance, c) for c in bad), default=0.0)
        rec.list_size = len(L)
        if not bad:
            run.report.contingency_list = list(L)
            return run.finish("optimal")
        if run.add_cuts(bad, it) == 0:
            run.stalled(bad)
            run.report.contingency_list = list(L)
            return run.finish("optimal")
    run.report.contingency_list = list(L)
    run.report.message = run.report.message or "time limit reached"
    return run.finish("time_limit")


def build_extensive_form(instance: Instance, block_cap: int = 5_000) -> MasterProblem:
    """Master problem plus one unrelaxed recourse block per (contingency, period)."""
    count = instance_contingency_count(instance)
    blocks = count * instance.periods
    if blocks > block_cap:
        raise BuildCapExceeded(f"extensive form needs {blocks} (contingency, period) blocks; "
                               f"cap is {block_cap}")
    master = MasterProblem(instance, name="extensive_form")
    G = instance.system.num_generators
    for c in _all_contingencies(instance):
        for t in range(instance.periods):
            add_recourse_block(master.program, instance, t, c,
                               [master.x[g][t] for g in range(G)], [master.p[g][t] for g in range(G)],
                               relaxed=False, tag=f"{c.label()}@{t}:")
    return master


def solve_ef(instance: Instance, config: RunConfig | None = None) -> RunReport:
    config = replace(config or RunConfig(), algorithm="ef")
    clock = _Clock(config.time_limit)
    rel = instance.reliability
    rep = RunReport("ef", "time_limit", instance_name=instance.name, k=rel.k, epsilon=tuple(rel.epsilon))
    master = build_extensive_form(instance, config.ef_block_cap)
    t0 = time.perf_counter()
    res = solve_milp(master.program, replace(config.options, time_limit=max(clock.remaining(), 1e-3)),
                     config.backend)
    rep.times["rmp"] = time.perf_counter() - t0
    rep.iterations = 1
    rep.master_gap = res.gap
    rep.trace.append(IterationRecord(1, res.objective, res.bound, res.status.value, rmp_time=rep.times["rmp"]))
    if res.status == Status.INFEASIBLE:
        rep.status = "infeasible"
        rep.message = "extensive form infeasible"
    elif res.has_solution:
        rep.solution = extract_solution(res, instance, master)
        rep.objective = rep.solution.objective
        rep.feasibility_gap = 0.0
        rep.status = "optimal" if res.status in (Status.OPTIMAL, Status.GAP_LIMIT) else "compliant_at_limit"
    else:
        rep.message = "time limit reached without incumbent"
    rep.times["total"] = time.perf_counter() - clock.start
    return rep


SOLVERS = {"ef": solve_ef, "bd": solve_bd, "csa1": solve_csa1, "csa2": solve_csa2}


def solve(instance: Instance, config: RunConfig | None = None) -> RunReport:
    config = config or RunConfig()
    return SOLVERS[config.algorithm](instance, config)


# -- compliance oracle --------------------------------------------------------------


@dataclass
class ViolationRow:
    contingency: Contingency
    period: int
    violation_mw: float
    shed_mw: float
    threshold_mw: float

    def to_dict(self, instance: Instance | None = None) -> dict:
        return {"contingency": self.contingency.to_dict(), "label": self.contingency.label(instance),
                "period": self.period, "violation_mw": self.violation_mw, "shed_mw": self.shed_mw,
                "threshold_mw": self.threshold_mw}


@dataclass
class ComplianceReport:
    compliant: bool
    checked: int
    violations: list[ViolationRow]

    def to_dict(self, instance: Instance | None = None) -> dict:
        return {"compliant": self.compliant, "checked": self.checked,
                "violations": [v.to_dict(instance) for v in self.violations]}


def verify_compliance(instance: Instance, solution: CommitmentSolution, cap: int = 10_000,
                      options: SolverOptions | None = None, backend=None, workers: int = 1) -> ComplianceReport:
    """Check every contingency of size 1..k in every period against ``solution``."""
    count = instance_contingency_count(instance)
    if count > cap:
        raise BuildCapExceeded(f"{count} contingencies exceed the verification cap {cap}")
    pairs = [(c, t) for c in _all_contingencies(instance) for t in range(instance.periods)]

    def one(pair):
        c, t = pair
        return check_feasibility(instance, solution.x[:, t], solution.dispatch[:, t], c, t, options, backend)

    rows = []
    for chk in _map(one, pairs, workers):
        if not chk.feasible:
            j = chk.contingency.size
            rows.append(ViolationRow(chk.contingency, chk.period, chk.violation,
                                     chk.recourse.shed_total,
                                     instance.reliability.eps(j) * instance.demand.total(chk.period)))
    return ComplianceReport(not rows, len(pairs), rows)
