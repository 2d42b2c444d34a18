"""Solver-agnostic linear / mixed-integer program representation.

Programs are assembled from :class:`Var` handles and linear expressions::

    prog = Program("toy")
    x = prog.add_var(ub=4, name="x")
    y = prog.add_var(kind=BINARY, name="y")
    prog.add_constr(x + 2 * y <= 5, name="cap")
    prog.maximize(3 * x + y)

and converted to the usual matrix form by :meth:`Program.to_arrays` for the
backends.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

CONTINUOUS = "continuous"
BINARY = "binary"

LE, GE, EQ = "<=", ">=", "=="


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    GAP_LIMIT = "gap_limit"
    TIME_LIMIT = "time_limit"


class SolverError(RuntimeError):
    """Numeric failure or malformed program handed to a backend."""


class Var:
    __slots__ = ("index", "kind", "lb", "ub", "name")

    def __init__(self, index: int, kind: str, lb: float, ub: float, name: str):
        self.index = index
        self.kind = kind
        self.lb = lb
        self.ub = ub
        self.name = name

    def _expr(self) -> "LinExpr":
        return LinExpr({self.index: 1.0})

    def __hash__(self):
        return hash(("var", self.index))

    def __repr__(self):
        return f"Var({self.name or self.index})"

    def __add__(self, other):
        return self._expr() + other

    __radd__ = __add__

    def __sub__(self, other):
        return self._expr() - other

    def __rsub__(self, other):
        return other - self._expr()

    def __mul__(self, k):
        return self._expr() * k

    __rmul__ = __mul__

    def __neg__(self):
        return self._expr() * -1.0

    def __le__(self, other):
        return self._expr() <= other

    def __ge__(self, other):
        return self._expr() >= other

    def __eq__(self, other):  # type: ignore[override]
        return self._expr() == other


class LinExpr:
    """Affine expression ``sum(coef * var) + const`` keyed by variable index."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Mapping[int, float] | None = None, const: float = 0.0):
        self.terms: dict[int, float] = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def of(value) -> "LinExpr":
        if isinstance(value, LinExpr):
            return value
        if isinstance(value, Var):
            return value._expr()
        return LinExpr(const=float(value))

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def __add__(self, other):
        out = self.copy()
        if isinstance(other, (LinExpr, Var)):
            o = LinExpr.of(other)
            for k, v in o.terms.items():
                out.terms[k] = out.terms.get(k, 0.0) + v
            out.const += o.const
        else:
            out.const += float(other)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        return self + (LinExpr.of(other) * -1.0)

    def __rsub__(self, other):
        return (self * -1.0) + other

    def __mul__(self, k):
        if isinstance(k, (LinExpr, Var)):
            raise TypeError("products of decision variables are not linear")
        k = float(k)
        return LinExpr({i: v * k for i, v in self.terms.items()}, self.const * k)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def _compare(self, other, sense):
        diff = self - other
        terms = {i: v for i, v in diff.terms.items() if v != 0.0}
        return Constraint(terms, sense, -diff.const)

    def __le__(self, other):
        return self._compare(other, LE)

    def __ge__(self, other):
        return self._compare(other, GE)

    def __eq__(self, other):  # type: ignore[override]
        return self._compare(other, EQ)

    __hash__ = None  # type: ignore[assignment]

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(v * x[i] for i, v in self.terms.items())


def quicksum(items: Iterable) -> LinExpr:
    out = LinExpr()
    for it in items:
        if isinstance(it, Var):
            out.terms[it.index] = out.terms.get(it.index, 0.0) + 1.0
        elif isinstance(it, LinExpr):
            for k, v in it.terms.items():
                out.terms[k] = out.terms.get(k, 0.0) + v
            out.const += it.const
        else:
            out.const += float(it)
    return out


@dataclass
class Constraint:
    terms: dict[int, float]
    sense: str
    rhs: float
    name: str = ""

    def __post_init__(self):
        if self.sense not in (LE, GE, EQ):
            raise ValueError(f"unknown constraint sense {self.sense!r}")
        for v in self.terms.values():
            if not math.isfinite(v):
                raise ValueError(f"non-finite coefficient in constraint {self.name!r}")
        if not math.isfinite(self.rhs):
            raise ValueError(f"non-finite right-hand side in constraint {self.name!r}")

    def activity(self, x: np.ndarray) -> float:
        return sum(v * x[i] for i, v in self.terms.items())

    def violation(self, x: np.ndarray) -> float:
        a = self.activity(x)
        if self.sense == LE:
            return max(0.0, a - self.rhs)
        if self.sense == GE:
            return max(0.0, self.rhs - a)
        return abs(a - self.rhs)


@dataclass(frozen=True)
class SolverOptions:
    rel_gap: float = 1e-3
    time_limit: float = math.inf
    feasibility_tol: float = 1e-7
    integrality_tol: float = 1e-6
    abs_gap: float = 1e-9

    def __post_init__(self):
        for name in ("rel_gap", "time_limit", "feasibility_tol", "integrality_tol", "abs_gap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class ProgramArrays:
    """Matrix view: ``min/max c @ x + obj_const`` s.t. ``A x (senses) b``, ``lb <= x <= ub``."""

    c: np.ndarray
    obj_const: float
    maximize: bool
    A: sp.csr_matrix
    senses: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray


@dataclass
class SolveResult:
    status: Status
    objective: float = math.nan
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    bound: float = math.nan
    gap: float = math.nan
    iterations: int = 0
    nodes: int = 0
    runtime: float = 0.0
    message: str = ""
    backend: str = ""

    @property
    def has_solution(self) -> bool:
        return self.x is not None and self.status in (
            Status.OPTIMAL,
            Status.GAP_LIMIT,
            Status.TIME_LIMIT,
        )

    def value(self, item) -> float:
        if self.x is None:
            raise ValueError("no primal solution available")
        if isinstance(item, Var):
            return float(self.x[item.index])
        return float(LinExpr.of(item).value(self.x))

    def dual(self, row: int) -> float:
        if self.duals is None:
            raise ValueError("no dual values available")
        return float(self.duals[row])


class Program:
    """A linear or mixed-binary program. Rows may be appended between solves."""

    def __init__(self, name: str = ""):
        self.name = name
        self.variables: list[Var] = []
        self.rows: list[Constraint] = []
        self.objective = LinExpr()
        self.maximize_objective = False
        self._cache: tuple[int, int, ProgramArrays] | None = None

    # -- building -----------------------------------------------------------
    def add_var(self, lb: float = 0.0, ub: float = math.inf, kind: str = CONTINUOUS,
                name: str = "") -> Var:
        lb, ub = float(lb), float(ub)
        if kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if lb > ub or math.isnan(lb) or math.isnan(ub):
            raise ValueError(f"variable {name!r}: lower bound {lb} exceeds upper bound {ub}")
        v = Var(len(self.variables), kind, lb, ub, name)
        self.variables.append(v)
        return v

    def add_binary(self, name: str = "") -> Var:
        return self.add_var(0.0, 1.0, BINARY, name)

    def add_constr(self, constraint: Constraint, name: str = "") -> int:
        if not isinstance(constraint, Constraint):
            raise TypeError("expected a Constraint (build one with <=, >= or ==)")
        n = len(self.variables)
        for i in constraint.terms:
            if not 0 <= i < n:
                raise SolverError(f"constraint {name!r} references unknown variable {i}")
        if name:
            constraint.name = name
        self.rows.append(constraint)
        return len(self.rows) - 1

    def minimize(self, expr) -> None:
        self.objective = LinExpr.of(expr).copy()
        self.maximize_objective = False
        self._cache = None

    def maximize(self, expr) -> None:
        self.objective = LinExpr.of(expr).copy()
        self.maximize_objective = True
        self._cache = None

    # -- queries -------------------------------------------------------------
    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    @property
    def is_mip(self) -> bool:
        return any(v.kind == BINARY for v in self.variables)

    def to_arrays(self) -> ProgramArrays:
        key = (len(self.variables), len(self.rows))
        if self._cache is not None and self._cache[:2] == key:
            return self._cache[2]
        n, m = key
        c = np.zeros(n)
        for i, v in self.objective.terms.items():
            c[i] = v
        rows, cols, vals = [], [], []
        for r, con in enumerate(self.rows):
            for i, v in con.terms.items():
                rows.append(r)
                cols.append(i)
                vals.append(v)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
        arrays = ProgramArrays(
            c=c,
            obj_const=self.objective.const,
            maximize=self.maximize_objective,
            A=A,
            senses=np.array([con.sense for con in self.rows], dtype=object),
            b=np.array([con.rhs for con in self.rows], dtype=float),
            lb=np.array([v.lb for v in self.variables], dtype=float),
            ub=np.array([v.ub for v in self.variables], dtype=float),
            integer=np.array([v.kind == BINARY for v in self.variables], dtype=bool),
        )
        self._cache = (n, m, arrays)
        return arrays

    def max_violation(self, x: np.ndarray) -> float:
        """Largest row or bound violation of ``x`` (absolute units)."""
        worst = 0.0
        for con in self.rows:
            worst = max(worst, con.violation(x))
        for v in self.variables:
            worst = max(worst, v.lb - x[v.index], x[v.index] - v.ub)
        return worst

    # -- debug dump -----------------------------------------------------------
    def write_lp(self, stream=None) -> str:
        """Write the program in CPLEX-LP-like text; returns the text."""
        out = io.StringIO()

        def name_of(i: int) -> str:
            return self.variables[i].name or f"x{i}"

        def fmt(terms: Mapping[int, float]) -> str:
            if not terms:
                return "0"
            parts = []
            for i, v in sorted(terms.items()):
                sign = "-" if v < 0 else "+"
                parts.append(f"{sign} {abs(v):.12g} {_lp_name(name_of(i))}")
            s = " ".join(parts)
            return s[2:] if s.startswith("+ ") else s

        out.write(f"\\ {self.name}\n")
        out.write("Maximize\n" if self.maximize_objective else "Minimize\n")
        out.write(f" obj: {fmt(self.objective.terms)}\n")
        if self.objective.const:
            out.write(f"\\ objective constant {self.objective.const:.12g}\n")
        out.write("Subject To\n")
        for r, con in enumerate(self.rows):
            sense = {LE: "<=", GE: ">=", EQ: "="}[con.sense]
            out.write(f" {_lp_name(con.name or f'r{r}')}_{r}: {fmt(con.terms)} {sense} {con.rhs:.12g}\n")
        out.write("Bounds\n")
        for v in self.variables:
            nm = _lp_name(name_of(v.index))
            if math.isinf(v.lb) and math.isinf(v.ub):
                out.write(f" {nm} free\n")
            elif math.isinf(v.ub):
                out.write(f" {nm} >= {v.lb:.12g}\n" if math.isfinite(v.lb) else f" -inf <= {nm}\n")
            elif math.isinf(v.lb):
                out.write(f" -inf <= {nm} <= {v.ub:.12g}\n")
            else:
                out.write(f" {v.lb:.12g} <= {nm} <= {v.ub:.12g}\n")
        binaries = [_lp_name(name_of(v.index)) for v in self.variables if v.kind == BINARY]
        if binaries:
            out.write("Binaries\n")
            for nm in binaries:
                out.write(f" {nm}\n")
        out.write("End\n")
        text = out.getvalue()
        if stream is not None:
            stream.write(text)
        return text


def _lp_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "_.[]" else "_" for ch in name)
