"""Contingency enumeration, post-contingency recourse LPs and feasibility cuts.

A contingency fixes the failure indicators ``d`` of a set of generators and
lines. For an operating point ``(x^t, p~^t)`` the corrective recourse problem
asks whether the surviving units, ramping from ``p~^t``, can serve all but an
``eps_j`` fraction of demand. Its relaxation adds a generation-shedding slack
``r_g`` per unit and an excess-shed slack ``s``; the minimal slack total is the
violation, and the row duals give a cut on ``(x^t, p~^t)``.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .milp import LinExpr, Program, SolverError, SolverOptions, Status, quicksum, solve_lp
from .model import Instance

# -- contingencies -------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Contingency:
    failed_gens: tuple[int, ...] = ()
    failed_lines: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "failed_gens", tuple(sorted(set(self.failed_gens))))
        object.__setattr__(self, "failed_lines", tuple(sorted(set(self.failed_lines))))

    @property
    def size(self) -> int:
        return len(self.failed_gens) + len(self.failed_lines)

    def label(self, instance: Instance | None = None) -> str:
        if instance is None:
            parts = [f"G{g + 1}" for g in self.failed_gens] + [f"L{e + 1}" for e in self.failed_lines]
        else:
            sysm = instance.system
            parts = [sysm.generators[g].name or f"G{g + 1}" for g in self.failed_gens]
            parts += [sysm.lines[e].name or f"L{e + 1}" for e in self.failed_lines]
        return "{" + ",".join(parts) + "}"

    def to_dict(self) -> dict:
        return {"generators": list(self.failed_gens), "lines": list(self.failed_lines)}

    @classmethod
    def from_dict(cls, d: dict) -> "Contingency":
        return cls(tuple(d.get("generators", ())), tuple(d.get("lines", ())))

    def check_against(self, instance: Instance) -> None:
        sysm = instance.system
        for g in self.failed_gens:
            if not 0 <= g < sysm.num_generators or sysm.generators[g].fail_immune:
                raise ValueError(f"generator {g} cannot fail")
        for e in self.failed_lines:
            if not 0 <= e < sysm.num_lines or sysm.lines[e].fail_immune:
                raise ValueError(f"line {e} cannot fail")


NO_FAILURE = Contingency()


def enumerate_contingencies(instance: Instance, j: int) -> Iterator[Contingency]:
    """All contingencies with exactly ``j`` failed non-immune elements.

    Elements are ordered generators first, then lines, and subsets come out in
    lexicographic order of that list.
    """
    if j < 1:
        raise ValueError(f"contingency size must be >= 1 (got {j})")
    sysm = instance.system
    elems = [("g", g) for g in sysm.failable_generators] + [("e", e) for e in sysm.failable_lines]
    for combo in itertools.combinations(elems, j):
        yield Contingency(tuple(i for kind, i in combo if kind == "g"),
                          tuple(i for kind, i in combo if kind == "e"))


def count_contingencies(num_gens: int, num_lines: int, k: int) -> int:
    """Number of contingencies of size 1..k over ``num_gens + num_lines`` elements."""
    if min(num_gens, num_lines, k) < 0:
        raise ValueError("arguments must be nonnegative")
    n = num_gens + num_lines
    total = sum(math.comb(n, j) for j in range(1, k + 1))
    assert total <= (n + 1) ** k - 1
    return total


def instance_contingency_count(instance: Instance, k: int | None = None) -> int:
    k = instance.reliability.k if k is None else k
    sysm = instance.system
    return count_contingencies(len(sysm.failable_generators), len(sysm.failable_lines), k)


class DynamicContingencyList:
    """Ordered contingency list with set semantics."""

    def __init__(self, items: Iterable[Contingency] = ()):
        self._items: list[Contingency] = []
        self._seen: set[Contingency] = set()
        for c in items:
            self.append(c)

    def append(self, c: Contingency) -> bool:
        if c in self._seen:
            return False
        self._seen.add(c)
        self._items.append(c)
        return True

    def __contains__(self, c) -> bool:
        return c in self._seen

    def __iter__(self) -> Iterator[Contingency]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Contingency:
        return self._items[i]


# -- recourse block ----------------------------------------------------------------


@dataclass
class RecourseBlock:
    """Variables and row indices of one post-contingency recourse block."""

    contingency: Contingency
    period: int
    p: list
    q: list
    f: list
    theta: list
    r: list | None = None
    s: object = None
    rows: dict[str, list[int]] = field(default_factory=dict)


def add_recourse_block(prog: Program, instance: Instance, t: int, cont: Contingency,
                       x_t: Sequence, p_t: Sequence, relaxed: bool, tag: str = "") -> RecourseBlock:
    """Append the recourse rows for ``(cont, t)`` to ``prog``.

    ``x_t`` and ``p_t`` may hold numbers (a fixed operating point) or master
    variables (extensive form). With ``relaxed`` the slacks ``r`` and ``s`` are
    added and the block is always feasible.
    """
    sysm = instance.system
    rel = instance.reliability
    j = cont.size
    D = instance.demand.loads[:, t]
    d_g = np.zeros(sysm.num_generators)
    d_g[list(cont.failed_gens)] = 1.0
    d_e = np.zeros(sysm.num_lines)
    d_e[list(cont.failed_lines)] = 1.0
    eps = rel.eps(j) if j >= 1 else 0.0
    gf = (lambda g: rel.gen_factor(g, j)) if j >= 1 else (lambda g: 1.0)
    lf = (lambda e: rel.line_factor(e, j)) if j >= 1 else (lambda e: 1.0)

    p = [prog.add_var(name=f"{tag}p[{g}]") for g in range(sysm.num_generators)]
    q = [prog.add_var(name=f"{tag}q[{i}]") for i in range(sysm.num_buses)]
    f = [prog.add_var(-math.inf, math.inf, name=f"{tag}f[{e}]") for e in range(sysm.num_lines)]
    theta = [prog.add_var(0.0, 0.0, name=f"{tag}th[{i}]") if i == sysm.reference_bus
             else prog.add_var(-math.inf, math.inf, name=f"{tag}th[{i}]") for i in range(sysm.num_buses)]
    r = [prog.add_var(name=f"{tag}r[{g}]") for g in range(sysm.num_generators)] if relaxed else None
    s = prog.add_var(name=f"{tag}s") if relaxed else None
    blk = RecourseBlock(cont, t, p, q, f, theta, r, s)
    rows = blk.rows
    add = prog.add_constr

    rows["alpha"] = []
    for i in range(sysm.num_buses):
        gen = quicksum((p[g] - r[g]) if relaxed else p[g] for g in sysm.gens_at[i])
        bal = gen + quicksum(f[e] for e in sysm.lines_into[i]) - quicksum(f[e] for e in sysm.lines_out_of[i]) + q[i]
        rows["alpha"].append(add(bal == float(D[i]), f"{tag}bal[{i}]"))
    rows["beta"], rows["delta_hat"], rows["delta_check"] = [], [], []
    for e in sysm.lines:
        live = 1.0 - d_e[e.id]
        rows["beta"].append(add(e.susceptance * live * (theta[e.from_bus] - theta[e.to_bus]) - f[e.id] == 0,
                                f"{tag}kirch[{e.id}]"))
        cap = e.flow_limit * lf(e.id) * live
        rows["delta_hat"].append(add(f[e.id] <= cap, f"{tag}fub[{e.id}]"))
        rows["delta_check"].append(add(-1.0 * f[e.id] <= cap, f"{tag}flb[{e.id}]"))
    rows["gamma"], rows["lambda_hat"], rows["lambda_check"], rows["eta"] = [], [], [], []
    for g in sysm.generators:
        live = 1.0 - d_g[g.id]
        xg, pg = LinExpr.of(x_t[g.id]), LinExpr.of(p_t[g.id])
        rows["gamma"].append(add(p[g.id] - g.p_max * live * xg <= 0, f"{tag}pcap[{g.id}]"))
        rows["lambda_hat"].append(add(p[g.id] - pg <= g.ramp_up * gf(g.id), f"{tag}rup[{g.id}]"))
        rows["lambda_check"].append(add(-1.0 * p[g.id] + live * pg <= g.ramp_down * gf(g.id) * live,
                                        f"{tag}rdn[{g.id}]"))
        if relaxed:
            rows["eta"].append(add(r[g.id] - p[g.id] <= 0, f"{tag}rcap[{g.id}]"))
    rows["zeta"] = [add(q[i] <= float(D[i]), f"{tag}qcap[{i}]") for i in range(sysm.num_buses)]
    shed = quicksum(q) - s if relaxed else quicksum(q)
    rows["pi"] = [add(shed <= eps * float(D.sum()), f"{tag}shed")]
    return blk


# -- relaxed feasibility check ---------------------------------------------------------


@dataclass
class DualValues:
    alpha: np.ndarray
    beta: np.ndarray
    delta_hat: np.ndarray
    delta_check: np.ndarray
    gamma: np.ndarray
    lambda_hat: np.ndarray
    lambda_check: np.ndarray
    zeta: np.ndarray
    eta: np.ndarray
    pi: float


@dataclass
class RecourseFlow:
    p: np.ndarray
    f: np.ndarray
    theta: np.ndarray
    q: np.ndarray
    shed_total: float
    r: np.ndarray | None = None
    s: float = 0.0


@dataclass
class FeasibilityCheck:
    contingency: Contingency
    period: int
    feasible: bool
    violation: float
    duals: DualValues
    recourse: RecourseFlow
    x_t: np.ndarray
    p_t: np.ndarray


def violation_tolerance(instance: Instance, t: int, options: SolverOptions | None = None) -> float:
    """Absolute violation (MW) below which a contingency counts as satisfied."""
    tol = (options or SolverOptions()).feasibility_tol
    return tol * (1.0 + instance.demand.total(t))


def build_relaxed_cf(instance: Instance, x_t, p_t, contingency: Contingency, t: int) -> tuple[Program, RecourseBlock]:
    """LP minimising generation shedding plus excess load shed for one (contingency, period)."""
    prog = Program(f"cf{contingency.label()}@{t}")
    blk = add_recourse_block(prog, instance, t, contingency,
                             [float(v) for v in x_t], [float(v) for v in p_t], relaxed=True)
    prog.minimize(quicksum(blk.r) + blk.s)
    return prog, blk


def check_feasibility(instance: Instance, x_t, p_t, contingency: Contingency, t: int,
                      options: SolverOptions | None = None, backend=None) -> FeasibilityCheck:
    options = options or SolverOptions()
    x_t = np.asarray(x_t, dtype=float)
    p_t = np.asarray(p_t, dtype=float)
    prog, blk = build_relaxed_cf(instance, x_t, p_t, contingency, t)
    res = solve_lp(prog, options, backend)
    if res.status != Status.OPTIMAL:
        raise SolverError(f"relaxed recourse LP for {contingency.label()} at t={t} "
                          f"ended with status {res.status.value}")
    y = res.duals
    pick = lambda fam: np.array([y[i] for i in blk.rows[fam]])  # noqa: E731
    duals = DualValues(pick("alpha"), pick("beta"), pick("delta_hat"), pick("delta_check"),
                       pick("gamma"), pick("lambda_hat"), pick("lambda_check"), pick("zeta"),
                       pick("eta"), float(y[blk.rows["pi"][0]]))
    val = lambda vs: np.array([res.x[v.index] for v in vs])  # noqa: E731
    q = val(blk.q)
    flow = RecourseFlow(val(blk.p), val(blk.f), val(blk.theta), q, float(q.sum()), val(blk.r),
                        float(res.x[blk.s.index]))
    violation = max(0.0, float(res.objective))
    feasible = violation <= violation_tolerance(instance, t, options)
    return FeasibilityCheck(contingency, t, feasible, violation, duals, flow, x_t, p_t)


def direct_recourse_feasible(instance: Instance, x_t, p_t, contingency: Contingency, t: int,
                             options: SolverOptions | None = None, backend=None) -> bool:
    """Feasibility of the unrelaxed recourse system (zero objective LP)."""
    prog = Program("recourse")
    add_recourse_block(prog, instance, t, contingency, [float(v) for v in x_t],
                       [float(v) for v in p_t], relaxed=False)
    prog.minimize(LinExpr())
    res = solve_lp(prog, options, backend)
    return res.status == Status.OPTIMAL


# -- cuts ----------------------------------------------------------------------------


class CutPreconditionError(ValueError):
    pass


@dataclass
class FeasibilityCut:
    """``const + x_coef @ x^t + p_coef @ p~^t <= 0`` for one (contingency, period)."""

    contingency: Contingency
    period: int
    x_coef: np.ndarray
    p_coef: np.ndarray
    const: float
    duals: DualValues
    violation: float = 0.0
    incumbent: tuple[np.ndarray, np.ndarray] | None = None  # (x^t, p~^t) the cut was built from

    def evaluate(self, x_t, p_t) -> float:
        return float(self.const + self.x_coef @ np.asarray(x_t, float) + self.p_coef @ np.asarray(p_t, float))

    def key(self) -> tuple:
        scale = max(1.0, abs(self.const), float(np.abs(self.x_coef).max(initial=0.0)),
                    float(np.abs(self.p_coef).max(initial=0.0)))
        coef = np.round(np.concatenate([[self.const], self.x_coef, self.p_coef]) / scale, 9) + 0.0
        return (self.contingency, self.period, coef.tobytes())

    def to_dict(self) -> dict:
        return {"contingency": self.contingency.to_dict(), "period": self.period,
                "x_coef": self.x_coef.tolist(), "p_coef": self.p_coef.tolist(),
                "const": self.const, "violation": self.violation}


def _snap_nonpositive(name: str, v: np.ndarray, tol: float) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if np.any(v > tol):
        raise SolverError(f"dual sign condition violated for {name}: max {v.max():.3g} > 0")
    return np.minimum(v, 0.0)


def make_cut(check: FeasibilityCheck, instance: Instance, tol: float = 1e-7) -> FeasibilityCut:
    """Feasibility cut from the duals of a violated relaxed recourse LP."""
    if check.feasible:
        raise CutPreconditionError(f"{check.contingency.label()} at t={check.period} is satisfied; no cut")
    sysm = instance.system
    rel = instance.reliability
    cont, t = check.contingency, check.period
    j = cont.size
    dv = check.duals
    dh = _snap_nonpositive("delta_hat", dv.delta_hat, tol)
    dc = _snap_nonpositive("delta_check", dv.delta_check, tol)
    gam = _snap_nonpositive("gamma", dv.gamma, tol)
    lh = _snap_nonpositive("lambda_hat", dv.lambda_hat, tol)
    lc = _snap_nonpositive("lambda_check", dv.lambda_check, tol)
    zeta = _snap_nonpositive("zeta", dv.zeta, tol)
    pi = float(_snap_nonpositive("pi", dv.pi, tol)[0])

    D = instance.demand.loads[:, t]
    live_g = np.ones(sysm.num_generators)
    live_g[list(cont.failed_gens)] = 0.0
    live_e = np.ones(sysm.num_lines)
    live_e[list(cont.failed_lines)] = 0.0
    F = np.array([e.flow_limit * rel.line_factor(e.id, j) for e in sysm.lines])
    pmax = np.array([g.p_max for g in sysm.generators])
    ru = np.array([g.ramp_up * rel.gen_factor(g.id, j) for g in sysm.generators])
    rd = np.array([g.ramp_down * rel.gen_factor(g.id, j) for g in sysm.generators])

    const = (float(D @ (dv.alpha + zeta)) + float((F * live_e) @ (dh + dc)) + float(ru @ lh)
             + float((rd * live_g) @ lc) + rel.eps(j) * float(D.sum()) * pi)
    x_coef = pmax * live_g * gam
    p_coef = lh - live_g * lc
    clean = DualValues(dv.alpha, dv.beta, dh, dc, gam, lh, lc, zeta, dv.eta, pi)
    return FeasibilityCut(cont, t, x_coef, p_coef, const, clean, check.violation,
                          (check.x_t.copy(), check.p_t.copy()))


# -- screening -------------------------------------------------------------------------


def _map(fn, items: list, workers: int):
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def check_many(instance: Instance, solution, pairs: Sequence[tuple[Contingency, int]],
               options: SolverOptions | None = None, backend=None, workers: int = 1) -> list[FeasibilityCheck]:
    """Run :func:`check_feasibility` for each (contingency, period); order is preserved."""
    def one(pair):
        c, t = pair
        return check_feasibility(instance, solution.x[:, t], solution.dispatch[:, t], c, t, options, backend)
    return _map(one, list(pairs), workers)


def screen_list(instance: Instance, solution, contingencies: Iterable[Contingency],
                options: SolverOptions | None = None, backend=None, workers: int = 1) -> list[FeasibilityCheck]:
    """Violated checks for every listed contingency in every period, ordered by (list position, t)."""
    pairs = [(c, t) for c in contingencies for t in range(instance.periods)]
    return [chk for chk in check_many(instance, solution, pairs, options, backend, workers)
            if not chk.feasible]
