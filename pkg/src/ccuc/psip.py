"""Worst-case contingency search (power system inhibition problem).

For a fixed operating point ``(x^t, p~^t)`` and failure budget ``j`` the
attacker picks ``d`` to maximise the optimal value of the relaxed recourse LP.
Replacing the inner LP by its dual gives a single-level maximisation with
bilinear terms ``(1 - d) * dual``; each is replaced by an auxiliary variable
with four big-M bounds, which is exact while ``|dual| <= U``.

Dual classes (``<= 0`` unless noted): ``alpha`` and ``beta`` free, ``delta_hat``,
``delta_check``, ``gamma``, ``lambda_hat``, ``lambda_check``, ``zeta``, ``eta``,
``pi``. Products: ``r1 = (1-d_e) beta``, ``r2 = (1-d_e) delta_hat``,
``r3 = (1-d_e) delta_check``, ``r4 = (1-d_g) gamma``, ``r5 = (1-d_g) lambda_check``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .contingency import (
    Contingency,
    check_feasibility,
    enumerate_contingencies,
)
from .milp import Program, SolverError, SolverOptions, Status, quicksum, solve_lp, solve_milp
from .model import Instance

DUAL_CLASSES = ("alpha", "beta", "delta_hat", "delta_check", "gamma", "lambda_hat",
                "lambda_check", "zeta", "eta", "pi")
FREE_CLASSES = ("alpha", "beta")
PRODUCTS = {"r1": "beta", "r2": "delta_hat", "r3": "delta_check", "r4": "gamma", "r5": "lambda_check"}


class PsipError(RuntimeError):
    pass


@dataclass(frozen=True)
class PsipQuery:
    x_t: tuple[float, ...]
    p_t: tuple[float, ...]
    j: int
    period: int = 0

    @classmethod
    def from_solution(cls, solution, j: int, t: int) -> "PsipQuery":
        return cls(tuple(float(v) for v in solution.x[:, t]),
                   tuple(float(v) for v in solution.dispatch[:, t]), j, t)

    def check_against(self, instance: Instance) -> None:
        G = instance.system.num_generators
        if self.j < 1:
            raise ValueError("PSIP budget j must be >= 1")
        if len(self.x_t) != G or len(self.p_t) != G:
            raise ValueError(f"operating point must have {G} entries")
        if self.j > instance.reliability.k:
            raise ValueError(f"j={self.j} exceeds k={instance.reliability.k}; no eps_j defined")


@dataclass(frozen=True)
class BigMPolicy:
    """Dual bound ``U`` (uniform, optionally per class), grown geometrically when the audit fires."""

    initial: float | None = None
    per_class: dict = field(default_factory=dict)
    growth: float = 10.0
    max_retries: int = 3

    def __post_init__(self):
        if self.initial is not None and not self.initial > 0:
            raise ValueError("U must be positive")
        if not self.growth > 1:
            raise ValueError("growth factor must exceed 1")
        if any(not v > 0 for v in self.per_class.values()):
            raise ValueError("U must be positive")

    def bounds(self, instance: Instance) -> dict[str, float]:
        base = self.initial if self.initial is not None else 10.0 * (1.0 + float(instance.demand.totals.max()))
        return {c: float(self.per_class.get(c, base)) for c in DUAL_CLASSES}


@dataclass
class PsipModel:
    program: Program
    duals: dict[str, list]
    products: dict[str, list]
    d_gen: dict[int, object]
    d_line: dict[int, object]
    U: dict[str, float]


@dataclass
class PsipResult:
    objective: float
    contingency: Contingency | None
    period: int
    j: int
    duals: dict[str, np.ndarray] = field(default_factory=dict)
    products: dict[str, np.ndarray] = field(default_factory=dict)
    d_gen: np.ndarray | None = None
    d_line: np.ndarray | None = None
    max_abs_dual: dict[str, float] = field(default_factory=dict)
    U: dict[str, float] = field(default_factory=dict)
    retries: int = 0
    milp_objective: float = math.nan
    milp_status: str = ""
    milp_product_error: float = math.nan
    nodes: int = 0
    runtime: float = 0.0

    def product_errors(self) -> dict[str, float]:
        """Largest ``|r - (1 - d) * dual|`` per product family."""
        out = {}
        for name, cls in PRODUCTS.items():
            d = self.d_line if name in ("r1", "r2", "r3") else self.d_gen
            out[name] = float(np.max(np.abs(self.products[name] - (1 - d) * self.duals[cls]), initial=0.0))
        return out

    def to_dict(self, instance: Instance | None = None) -> dict:
        return {
            "period": self.period, "j": self.j, "objective": self.objective,
            "contingency": None if self.contingency is None else self.contingency.to_dict(),
            "label": None if self.contingency is None else self.contingency.label(instance),
            "max_abs_dual": self.max_abs_dual, "U": self.U, "retries": self.retries,
            "nodes": self.nodes, "runtime": self.runtime,
        }


def build_psip(instance: Instance, query: PsipQuery, U: dict[str, float] | float) -> PsipModel:
    """Single-level MILP whose optimum is the worst relaxed-recourse value over size-``j`` failures."""
    sysm = instance.system
    rel = instance.reliability
    t, j = query.period, query.j
    if not isinstance(U, dict):
        U = {c: float(U) for c in DUAL_CLASSES}
    D = instance.demand.loads[:, t]
    Dt = float(D.sum())
    prog = Program(f"psip[j={j},t={t}]")

    def dual_vars(cls, n):
        lo, hi = -U[cls], (U[cls] if cls in FREE_CLASSES else 0.0)
        return [prog.add_var(lo, hi, name=f"{cls}[{k}]") for k in range(n)]

    G, E, I = sysm.num_generators, sysm.num_lines, sysm.num_buses
    du = {"alpha": dual_vars("alpha", I), "beta": dual_vars("beta", E),
          "delta_hat": dual_vars("delta_hat", E), "delta_check": dual_vars("delta_check", E),
          "gamma": dual_vars("gamma", G), "lambda_hat": dual_vars("lambda_hat", G),
          "lambda_check": dual_vars("lambda_check", G), "zeta": dual_vars("zeta", I),
          "eta": dual_vars("eta", G), "pi": [prog.add_var(-1.0, 0.0, name="pi")]}
    d_gen = {g: prog.add_binary(f"d_g[{g}]") for g in sysm.failable_generators}
    d_line = {e: prog.add_binary(f"d_e[{e}]") for e in sysm.failable_lines}
    prog.add_constr(quicksum(list(d_gen.values()) + list(d_line.values())) == j, "budget")

    products: dict[str, list] = {}
    for name, cls in PRODUCTS.items():
        dmap, n = (d_line, E) if name in ("r1", "r2", "r3") else (d_gen, G)
        out = []
        for k in range(n):
            u = du[cls][k]
            if k not in dmap:  # immune: never fails, product is the dual itself
                out.append(u)
                continue
            d = dmap[k]
            M = U[cls]
            free = cls in FREE_CLASSES
            r = prog.add_var(-M, M if free else 0.0, name=f"{name}[{k}]")
            prog.add_constr(r - u - M * d <= 0, f"{name}_a[{k}]")
            prog.add_constr(r - u + M * d >= 0, f"{name}_b[{k}]")
            prog.add_constr(r + M * (1 - d) >= 0, f"{name}_c[{k}]")
            if free:
                prog.add_constr(r - M * (1 - d) <= 0, f"{name}_d[{k}]")
            out.append(r)
        products[name] = out

    a, pi = du["alpha"], du["pi"][0]
    for g in sysm.generators:
        i = g.bus
        prog.add_constr(a[i] + du["gamma"][g.id] + du["lambda_hat"][g.id] - du["lambda_check"][g.id]
                        - du["eta"][g.id] <= 0, f"col_p[{g.id}]")
        prog.add_constr(-1.0 * a[i] + du["eta"][g.id] <= 1, f"col_r[{g.id}]")
    for i in range(I):
        prog.add_constr(a[i] + du["zeta"][i] + pi <= 0, f"col_q[{i}]")
    for e in sysm.lines:
        prog.add_constr(a[e.to_bus] - a[e.from_bus] - du["beta"][e.id] + du["delta_hat"][e.id]
                        - du["delta_check"][e.id] == 0, f"col_f[{e.id}]")
    r1 = products["r1"]
    for i in range(I):
        if i == sysm.reference_bus:
            continue
        expr = (quicksum(sysm.lines[e].susceptance * r1[e] for e in sysm.lines_out_of[i])
                - quicksum(sysm.lines[e].susceptance * r1[e] for e in sysm.lines_into[i]))
        if expr.terms:
            prog.add_constr(expr == 0, f"col_theta[{i}]")

    obj = quicksum(float(D[i]) * (a[i] + du["zeta"][i]) for i in range(I))
    for e in sysm.lines:
        cap = e.flow_limit * rel.line_factor(e.id, j)
        obj += cap * (products["r2"][e.id] + products["r3"][e.id])
    for g in sysm.generators:
        x, p = query.x_t[g.id], query.p_t[g.id]
        gf = rel.gen_factor(g.id, j)
        if g.p_max * x:
            obj += g.p_max * x * products["r4"][g.id]
        obj += (g.ramp_up * gf + p) * du["lambda_hat"][g.id]
        obj += (g.ramp_down * gf - p) * products["r5"][g.id]
    obj += rel.eps(j) * Dt * pi
    prog.maximize(obj)
    return PsipModel(prog, du, products, d_gen, d_line, U)


def _values(res, handles) -> np.ndarray:
    return np.array([res.x[v.index] for v in handles], dtype=float)


def solve_psip(instance: Instance, query: PsipQuery, policy: BigMPolicy | None = None,
               options: SolverOptions | None = None, backend=None) -> PsipResult:
    """Worst size-``j`` contingency at period ``query.period`` with an audited big-M."""
    query.check_against(instance)
    policy = policy or BigMPolicy()
    options = options or SolverOptions()
    sysm = instance.system
    start = time.perf_counter()
    if len(sysm.failable_generators) + len(sysm.failable_lines) < query.j:
        return PsipResult(0.0, None, query.period, query.j, milp_status="no_contingency")
    # the oracle must be exact, not merely within the master's optimality gap
    milp_opts = SolverOptions(rel_gap=min(options.rel_gap, 1e-9), time_limit=options.time_limit,
                              feasibility_tol=options.feasibility_tol,
                              integrality_tol=options.integrality_tol,
                              abs_gap=options.feasibility_tol * (1.0 + instance.demand.total(query.period)))
    U = policy.bounds(instance)
    for attempt in range(policy.max_retries + 1):
        model = build_psip(instance, query, U)
        res = solve_milp(model.program, milp_opts, backend)
        if res.status == Status.INFEASIBLE:
            raise PsipError(f"PSIP infeasible for j={query.j} (budget cannot be met)")
        if not res.has_solution:
            raise PsipError(f"PSIP ended without incumbent: {res.status.value}")
        raw_err = _raw_product_error(model, res)
        fails = sorted(k for k, v in {**{("g", g): d for g, d in model.d_gen.items()},
                                      **{("e", e): d for e, d in model.d_line.items()}}.items()
                       if res.x[v.index] > 0.5)
        cont = Contingency(tuple(i for kind, i in fails if kind == "g"),
                           tuple(i for kind, i in fails if kind == "e"))
        # polish: same program with d fixed, so products are exact and w* is the LP value
        for k, v in list(model.d_gen.items()) + list(model.d_line.items()):
            fixed = 1.0 if res.x[v.index] > 0.5 else 0.0
            v.lb = v.ub = fixed
            v.kind = "continuous"
        model.program._cache = None
        lp = solve_lp(model.program, options, backend)
        if lp.status != Status.OPTIMAL:
            raise SolverError(f"PSIP polish LP ended with status {lp.status.value}")
        w = float(lp.objective)
        primal = check_feasibility(instance, query.x_t, query.p_t, cont, query.period,
                                   options, backend).violation
        tol = options.feasibility_tol * (1.0 + instance.demand.total(query.period))
        lp = _min_norm_duals(model, w, tol, options, backend)
        duals = {c: _values(lp, model.duals[c]) for c in DUAL_CLASSES}
        worst = {c: float(np.max(np.abs(duals[c]), initial=0.0)) for c in DUAL_CLASSES}
        if w < primal - 10 * tol:
            # bounded duals cannot reach the recourse value: every class at its bound is suspect
            binding = [c for c in DUAL_CLASSES if c != "pi" and worst[c] >= 0.999 * U[c]] or \
                [c for c in DUAL_CLASSES if c != "pi"]
        else:
            binding = [c for c in DUAL_CLASSES if c != "pi" and worst[c] >= 0.999 * U[c]]
        if not binding:
            d_gen = np.zeros(sysm.num_generators)
            d_gen[list(cont.failed_gens)] = 1.0
            d_line = np.zeros(sysm.num_lines)
            d_line[list(cont.failed_lines)] = 1.0
            return PsipResult(
                objective=max(0.0, w), contingency=cont, period=query.period,
                j=query.j, duals=duals,
                products={n: _values(lp, model.products[n]) for n in PRODUCTS},
                d_gen=d_gen, d_line=d_line, max_abs_dual=worst, U=dict(U), retries=attempt,
                milp_objective=float(res.objective), milp_status=res.status.value, nodes=res.nodes,
                milp_product_error=raw_err,
                runtime=time.perf_counter() - start)
        if attempt == policy.max_retries:
            break
        for c in binding:
            U[c] *= policy.growth
    raise PsipError(f"big-M exhausted after {policy.max_retries} retries; binding classes: "
                    f"{', '.join(binding)}")


def _raw_product_error(model: PsipModel, res) -> float:
    """Largest ``|r - (1 - d) * dual|`` in the MILP incumbent itself, before polishing."""
    worst = 0.0
    for name, cls in PRODUCTS.items():
        dmap = model.d_line if name in ("r1", "r2", "r3") else model.d_gen
        for k, r in enumerate(model.products[name]):
            d = res.x[dmap[k].index] if k in dmap else 0.0
            worst = max(worst, abs(res.x[r.index] - (1.0 - d) * res.x[model.duals[cls][k].index]))
    return worst


def _min_norm_duals(model: PsipModel, w: float, tol: float, options, backend):
    """Among duals with objective >= w - tol pick one of least L1 norm.

    Directions with zero objective coefficient (e.g. around offline units)
    make the optimal face unbounded; auditing an arbitrary vertex of that
    face would flag the big-M bound even when it restricts nothing.
    """
    prog = model.program
    prog.add_constr(model.program.objective >= w - tol, "objective_floor")
    norm = []
    for c in DUAL_CLASSES:
        for u in model.duals[c]:
            if c in FREE_CLASSES:
                a = prog.add_var(name=f"abs_{u.name}")
                prog.add_constr(a - u >= 0)
                prog.add_constr(a + u >= 0)
                norm.append(a)
            else:
                norm.append(-1.0 * u)
    prog.minimize(quicksum(norm))
    res = solve_lp(prog, options, backend)
    if res.status != Status.OPTIMAL:
        raise SolverError(f"PSIP dual normalisation LP ended with status {res.status.value}")
    return res


@dataclass
class PsipVerification:
    psip_objective: float
    enumerated_max: float
    psip_contingency: Contingency | None
    argmax: list[Contingency]
    values: dict[Contingency, float]
    attained: float | None

    @property
    def matches(self) -> bool:
        if self.psip_contingency is None or not self.argmax:
            return self.psip_contingency is None and not self.argmax
        scale = 1.0 + abs(self.enumerated_max)
        return (abs(self.psip_objective - self.enumerated_max) <= 1e-6 * scale
                and abs(self.attained - self.enumerated_max) <= 1e-6 * scale)


def verify_psip_against_enumeration(instance: Instance, query: PsipQuery, cap: int = 10_000,
                                    policy: BigMPolicy | None = None,
                                    options: SolverOptions | None = None, backend=None) -> PsipVerification:
    """Compare :func:`solve_psip` with the maximum relaxed-recourse value over all size-``j`` failures."""
    sysm = instance.system
    n = len(sysm.failable_generators) + len(sysm.failable_lines)
    if math.comb(n, query.j) > cap:
        raise ValueError(f"{math.comb(n, query.j)} contingencies of size {query.j} exceed the cap {cap}")
    values: dict[Contingency, float] = {}
    if n >= query.j:
        for c in enumerate_contingencies(instance, query.j):
            values[c] = check_feasibility(instance, query.x_t, query.p_t, c, query.period,
                                          options, backend).violation
    best = max(values.values(), default=0.0)
    tol = 1e-6 * (1.0 + abs(best))
    argmax = [c for c, v in values.items() if v >= best - tol]
    res = solve_psip(instance, query, policy, options, backend)
    attained = values.get(res.contingency) if res.contingency is not None else None
    return PsipVerification(res.objective, best, res.contingency, argmax, values, attained)
