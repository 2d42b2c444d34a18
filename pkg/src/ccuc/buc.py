"""Baseline unit commitment master problem and the Benders cut pool.

The master couples the commitment logic (min up/down times, initial
conditions, startup/shutdown costs) with a DC-OPF dispatch for every period.
Feasibility cuts restricting ``(x^t, p~^t)`` are appended as plain rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .milp import Program, SolveResult, SolverOptions, Status, quicksum, solve_milp
from .model import Instance, InstanceValidationError


class InternalConsistencyError(RuntimeError):
    """A solver incumbent failed independent re-verification."""


# -- cut pool -------------------------------------------------------------------

class CutPool:
    """Ordered, duplicate-free collection of feasibility cuts."""

    def __init__(self, cuts: Sequence = ()):
        self.cuts: list = []
        self.origin: dict[int, tuple] = {}
        self._keys: set = set()
        for c in cuts:
            self.add(c)

    def add(self, cut, iteration: int = 0) -> bool:
        """Append ``cut``; returns False (and keeps the pool unchanged) for duplicates."""
        key = cut.key()
        if key in self._keys:
            return False
        self._keys.add(key)
        self.origin[len(self.cuts)] = (cut.contingency, cut.period, iteration)
        self.cuts.append(cut)
        return True

    def __contains__(self, cut) -> bool:
        return cut.key() in self._keys

    def __len__(self) -> int:
        return len(self.cuts)

    def __iter__(self) -> Iterator:
        return iter(self.cuts)


# -- solution -------------------------------------------------------------------

@dataclass
class CommitmentSolution:
    """Commitment and no-contingency dispatch over the horizon (rows: element, cols: period)."""

    x: np.ndarray
    startup_cost: np.ndarray
    shutdown_cost: np.ndarray
    dispatch: np.ndarray
    flows: np.ndarray
    angles: np.ndarray
    objective: float = 0.0
    energy_cost: float = 0.0

    @property
    def periods(self) -> int:
        return self.x.shape[1]

    def committed(self, t: int = 0) -> tuple[int, ...]:
        return tuple(int(g) for g in np.flatnonzero(self.x[:, t] > 0.5))

    @property
    def commitment_cost(self) -> float:
        return float(self.startup_cost.sum() + self.shutdown_cost.sum())

    def to_dict(self, instance: Instance | None = None) -> dict:
        names = None
        if instance is not None:
            names = [g.name or f"G{g.id + 1}" for g in instance.system.generators]
        out = {
            "objective": self.objective,
            "cost": {"startup": float(self.startup_cost.sum()),
                     "shutdown": float(self.shutdown_cost.sum()),
                     "energy": self.energy_cost},
            "commitment": self.x.astype(int).tolist(),
            "dispatch": self.dispatch.tolist(),
            "flows": self.flows.tolist(),
            "angles": self.angles.tolist(),
            "startup_cost": self.startup_cost.tolist(),
            "shutdown_cost": self.shutdown_cost.tolist(),
        }
        if names:
            out["committed"] = [[names[g] for g in self.committed(t)] for t in range(self.periods)]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CommitmentSolution":
        x = np.array(data["commitment"], dtype=float, ndmin=2)
        return cls(
            x=x,
            startup_cost=np.array(data.get("startup_cost", np.zeros_like(x)), dtype=float, ndmin=2),
            shutdown_cost=np.array(data.get("shutdown_cost", np.zeros_like(x)), dtype=float, ndmin=2),
            dispatch=np.array(data["dispatch"], dtype=float, ndmin=2),
            flows=np.array(data.get("flows", []), dtype=float),
            angles=np.array(data.get("angles", []), dtype=float),
            objective=float(data.get("objective", 0.0)),
            energy_cost=float(data.get("cost", {}).get("energy", 0.0)),
        )

    def to_json(self, instance: Instance | None = None) -> str:
        return json.dumps(self.to_dict(instance), indent=2)


# -- commitment feasibility check -------------------------------------------------

@dataclass(frozen=True)
class CommitmentViolation:
    family: str
    generator: int
    period: int  # zero-based period at which the violated row is anchored
    detail: str = ""


def initial_state(instance: Instance) -> tuple[np.ndarray, np.ndarray]:
    """``x^0`` and ``p~^0`` per generator."""
    gens = instance.system.generators
    x0 = np.array([1.0 if g.init_up > 0 else 0.0 for g in gens])
    p0 = np.array([g.initial_output if g.initial_output is not None else 0.0 for g in gens])
    return x0, p0


def _windows(g, T: int):
    """Yield ``(family, t, window)`` for the min up/down rows of unit ``g``.

    Periods are one-based here to mirror the usual summation limits; ranges are
    clamped to ``1..T``.
    """
    for t in range(max(1, g.init_up + 1), T - g.min_up + 2):
        if g.min_up > 0:
            yield "min_up", t, range(t, t + g.min_up)
    for t in range(max(1, T - g.min_up + 2), T + 1):
        yield "min_up_end", t, range(t, T + 1)
    for t in range(max(1, g.init_down + 1), T - g.min_down + 2):
        if g.min_down > 0:
            yield "min_down", t, range(t, t + g.min_down)
    for t in range(max(1, T - g.min_down + 2), T + 1):
        yield "min_down_end", t, range(t, T + 1)


def verify_commitment_constraints(x: np.ndarray, instance: Instance,
                                  tol: float = 1e-6) -> list[CommitmentViolation]:
    """Every violated min up/down or initial-condition row; empty iff ``x`` is admissible."""
    x = np.asarray(x, dtype=float)
    T = instance.periods
    x0, _ = initial_state(instance)
    out: list[CommitmentViolation] = []
    for g in instance.system.generators:
        row = x[g.id]
        xp = lambda t: x0[g.id] if t == 0 else row[t - 1]  # noqa: E731
        for t in range(1, min(g.init_up, T) + 1):
            if row[t - 1] < 1 - tol:
                out.append(CommitmentViolation("init_online", g.id, t - 1,
                                               f"must stay online for the first {g.init_up} periods"))
        for t in range(1, min(g.init_down, T) + 1):
            if row[t - 1] > tol:
                out.append(CommitmentViolation("init_offline", g.id, t - 1,
                                               f"must stay offline for the first {g.init_down} periods"))
        for family, t, win in _windows(g, T):
            up = row[t - 1] - xp(t - 1)
            if family == "min_up":
                ok = sum(row[s - 1] for s in win) >= g.min_up * up - tol
            elif family == "min_up_end":
                ok = sum(row[s - 1] - up for s in win) >= -tol
            elif family == "min_down":
                ok = sum(1 - row[s - 1] for s in win) >= g.min_down * (-up) - tol
            else:
                ok = sum((1 - row[s - 1]) + up for s in win) >= -tol
            if not ok:
                out.append(CommitmentViolation(family, g.id, t - 1))
    return out


# -- master problem ---------------------------------------------------------------

class MasterProblem:
    """Baseline UC program with handles to its variables.

    Variables are created in a fixed order (commitment, cost, dispatch, flow,
    angle) so any program that starts with this block (for instance the
    extensive form) can be decoded by :func:`extract_solution`.
    """

    def __init__(self, instance: Instance, cut_pool: CutPool | None = None, name: str = "master"):
        instance.validate()
        self.instance = instance
        sysm = instance.system
        G, E, I, T = sysm.num_generators, sysm.num_lines, sysm.num_buses, instance.periods
        for g in sysm.generators:
            if g.init_up > T or g.init_down > T:
                raise InstanceValidationError(
                    f"generators[{g.id}]: initial obligation exceeds the {T}-period horizon")
        prog = Program(name)
        self.program = prog
        self.x = [[prog.add_binary(f"x[{g},{t}]") for t in range(T)] for g in range(G)]
        self.cu = [[prog.add_var(name=f"cu[{g.id},{t}]") if g.cost_startup > 0 else None
                    for t in range(T)] for g in sysm.generators]
        self.cd = [[prog.add_var(name=f"cd[{g.id},{t}]") if g.cost_shutdown > 0 else None
                    for t in range(T)] for g in sysm.generators]
        self.p = [[prog.add_var(0.0, g.p_max, name=f"p[{g.id},{t}]") for t in range(T)]
                  for g in sysm.generators]
        self.f = [[prog.add_var(-e.flow_limit, e.flow_limit, name=f"f[{e.id},{t}]") for t in range(T)]
                  for e in sysm.lines]
        self.theta = [[prog.add_var(0.0, 0.0, name=f"th[{i},{t}]") if i == sysm.reference_bus
                       else prog.add_var(-np.inf, np.inf, name=f"th[{i},{t}]") for t in range(T)]
                      for i in range(I)]
        self.num_master_vars = prog.num_vars

        self._commitment_rows()
        self._dispatch_rows()
        cost = quicksum(v for row in self.cu + self.cd for v in row if v is not None)
        cost += quicksum(g.cost_marginal * self.p[g.id][t] for g in sysm.generators for t in range(T))
        prog.minimize(cost)
        self.cut_rows: list[int] = []
        self._pool_seen = 0
        if cut_pool is not None:
            self.sync(cut_pool)

    def x_prev(self, g: int, t: int):
        return self._x0[g] if t == 0 else self.x[g][t - 1]

    def _commitment_rows(self) -> None:
        prog, inst = self.program, self.instance
        T = inst.periods
        self._x0, self._p0 = initial_state(inst)
        for g in inst.system.generators:
            x = self.x[g.id]
            for t in range(min(g.init_up, T)):
                prog.add_constr(x[t] >= 1, f"init_on[{g.id},{t}]")
            for t in range(min(g.init_down, T)):
                prog.add_constr(x[t] <= 0, f"init_off[{g.id},{t}]")
            for family, t1, win in _windows(g, T):
                up = x[t1 - 1] - self.x_prev(g.id, t1 - 1)
                if family == "min_up":
                    con = quicksum(x[s - 1] for s in win) >= g.min_up * up
                elif family == "min_up_end":
                    con = quicksum(x[s - 1] - up for s in win) >= 0
                elif family == "min_down":
                    con = quicksum(1 - x[s - 1] for s in win) >= g.min_down * (-1 * up)
                else:
                    con = quicksum((1 - x[s - 1]) + up for s in win) >= 0
                if con.terms:
                    prog.add_constr(con, f"{family}[{g.id},{t1 - 1}]")
            for t in range(T):
                if self.cu[g.id][t] is not None:
                    prog.add_constr(self.cu[g.id][t] >= g.cost_startup * (x[t] - self.x_prev(g.id, t)),
                                    f"cost_up[{g.id},{t}]")
                if self.cd[g.id][t] is not None:
                    prog.add_constr(self.cd[g.id][t] >= g.cost_shutdown * (self.x_prev(g.id, t) - x[t]),
                                    f"cost_down[{g.id},{t}]")

    def _dispatch_rows(self) -> None:
        prog, inst = self.program, self.instance
        sysm = inst.system
        loads = inst.demand.loads
        for t in range(inst.periods):
            for i in range(sysm.num_buses):
                bal = (quicksum(self.p[g][t] for g in sysm.gens_at[i])
                       + quicksum(self.f[e][t] for e in sysm.lines_into[i])
                       - quicksum(self.f[e][t] for e in sysm.lines_out_of[i]))
                prog.add_constr(bal == float(loads[i, t]), f"balance[{i},{t}]")
            for e in sysm.lines:
                prog.add_constr(e.susceptance * (self.theta[e.from_bus][t] - self.theta[e.to_bus][t])
                                - self.f[e.id][t] == 0, f"kirchhoff[{e.id},{t}]")
            for g in sysm.generators:
                x, p = self.x[g.id][t], self.p[g.id][t]
                xp = self.x_prev(g.id, t)
                pp = self._p0[g.id] if t == 0 else self.p[g.id][t - 1]
                prog.add_constr(p - g.p_min * x >= 0, f"pmin[{g.id},{t}]")
                prog.add_constr(p - g.p_max * x <= 0, f"pmax[{g.id},{t}]")
                prog.add_constr(p - pp <= g.ramp_up * xp + g.startup_ramp * (x - xp) + g.p_max * (1 - x),
                                f"ramp_up[{g.id},{t}]")
                prog.add_constr(pp - p <= g.ramp_down * x + g.shutdown_ramp * (xp - x) + g.p_max * (1 - xp),
                                f"ramp_down[{g.id},{t}]")

    # -- cuts -------------------------------------------------------------------
    def add_cut(self, cut) -> int:
        t = cut.period
        lhs = quicksum(float(a) * self.x[g][t] for g, a in enumerate(cut.x_coef) if a != 0.0)
        lhs += quicksum(float(b) * self.p[g][t] for g, b in enumerate(cut.p_coef) if b != 0.0)
        row = self.program.add_constr(lhs <= -float(cut.const), f"fcut[{len(self.cut_rows)}]")
        self.cut_rows.append(row)
        return row

    def sync(self, pool: CutPool) -> int:
        """Append rows for pool entries not yet in the program; returns how many."""
        new = pool.cuts[self._pool_seen:]
        for cut in new:
            self.add_cut(cut)
        self._pool_seen = len(pool.cuts)
        return len(new)

    def solve(self, options: SolverOptions | None = None, backend=None) -> SolveResult:
        return solve_milp(self.program, options, backend)


def build_master(instance: Instance, cut_pool: CutPool | None = None) -> MasterProblem:
    """Baseline UC master with one row per pooled cut; ``.program`` holds the MILP."""
    return MasterProblem(instance, cut_pool)


# -- extraction -------------------------------------------------------------------

def evaluate_costs(x: np.ndarray, dispatch: np.ndarray, instance: Instance):
    """Startup, shutdown and energy cost matrices implied by ``x`` and ``dispatch``."""
    x0, _ = initial_state(instance)
    xprev = np.column_stack([x0, x[:, :-1]])
    cu_rate = np.array([g.cost_startup for g in instance.system.generators])[:, None]
    cd_rate = np.array([g.cost_shutdown for g in instance.system.generators])[:, None]
    cm = np.array([g.cost_marginal for g in instance.system.generators])[:, None]
    startup = cu_rate * np.maximum(0.0, x - xprev)
    shutdown = cd_rate * np.maximum(0.0, xprev - x)
    return startup, shutdown, float((cm * dispatch).sum())


def dispatch_violations(sol: CommitmentSolution, instance: Instance, tol: float) -> list[str]:
    """Independent check of the no-contingency dispatch rows (absolute tolerance ``tol``)."""
    sysm = instance.system
    out = []
    x, p, f, th = sol.x, sol.dispatch, sol.flows, sol.angles
    x0, p0 = initial_state(instance)
    for t in range(instance.periods):
        scale = tol * (1.0 + instance.demand.total(t))
        for i in range(sysm.num_buses):
            bal = (sum(p[g, t] for g in sysm.gens_at[i]) + sum(f[e, t] for e in sysm.lines_into[i])
                   - sum(f[e, t] for e in sysm.lines_out_of[i]))
            if abs(bal - instance.demand.loads[i, t]) > scale:
                out.append(f"balance bus {i} period {t}: {bal:.6f} != {instance.demand.loads[i, t]:.6f}")
        if abs(th[sysm.reference_bus, t]) > tol:
            out.append(f"reference angle period {t} is {th[sysm.reference_bus, t]:.3g}")
        for e in sysm.lines:
            if abs(f[e.id, t]) > e.flow_limit + scale:
                out.append(f"flow limit line {e.id} period {t}")
            if abs(e.susceptance * (th[e.from_bus, t] - th[e.to_bus, t]) - f[e.id, t]) > scale:
                out.append(f"kirchhoff line {e.id} period {t}")
        for g in sysm.generators:
            xt, xp = x[g.id, t], (x0[g.id] if t == 0 else x[g.id, t - 1])
            pt, pp = p[g.id, t], (p0[g.id] if t == 0 else p[g.id, t - 1])
            if pt < g.p_min * xt - scale or pt > g.p_max * xt + scale:
                out.append(f"output bounds unit {g.id} period {t}: {pt:.6f}")
            if pt - pp > g.ramp_up * xp + g.startup_ramp * (xt - xp) + g.p_max * (1 - xt) + scale:
                out.append(f"ramp up unit {g.id} period {t}")
            if pp - pt > g.ramp_down * xt + g.shutdown_ramp * (xp - xt) + g.p_max * (1 - xp) + scale:
                out.append(f"ramp down unit {g.id} period {t}")
    return out


def extract_solution(result: SolveResult, instance: Instance,
                     master: MasterProblem | None = None, tol: float = 1e-6) -> CommitmentSolution:
    """Decode and re-verify a master (or extensive-form) incumbent.

    Raises :class:`InternalConsistencyError` when the incumbent violates a
    commitment or dispatch constraint by more than ``tol`` (relative to demand).
    """
    if not result.has_solution:
        raise ValueError(f"no incumbent to extract (status {result.status.value})")
    m = master or MasterProblem(instance)
    v = result.x
    idx = lambda grid: np.array([[var.index for var in row] for row in grid], dtype=int)  # noqa: E731
    x = np.round(v[idx(m.x)])
    if np.any(np.abs(v[idx(m.x)] - x) > 1e-4):
        raise InternalConsistencyError("commitment values are not integral")
    p = v[idx(m.p)].copy()
    f = v[idx(m.f)].reshape(instance.system.num_lines, instance.periods)
    th = v[idx(m.theta)]
    startup, shutdown, energy = evaluate_costs(x, p, instance)
    sol = CommitmentSolution(x=x, startup_cost=startup, shutdown_cost=shutdown, dispatch=p,
                             flows=f, angles=th, energy_cost=energy,
                             objective=float(startup.sum() + shutdown.sum() + energy))
    problems = [f"{c.family} unit {c.generator} period {c.period}"
                for c in verify_commitment_constraints(x, instance)]
    problems += dispatch_violations(sol, instance, tol)
    if problems:
        raise InternalConsistencyError("incumbent failed re-verification: " + "; ".join(problems[:10]))
    return sol


def solve_buc(instance: Instance, options: SolverOptions | None = None, backend=None,
              cut_pool: CutPool | None = None) -> tuple[Status, CommitmentSolution | None, SolveResult]:
    """Convenience: build, solve and decode the master in one call."""
    master = MasterProblem(instance, cut_pool)
    res = master.solve(options, backend)
    if not res.has_solution:
        return res.status, None, res
    return res.status, extract_solution(res, instance, master), res
