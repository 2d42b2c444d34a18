"""Dense-tableau two-phase primal simplex with bounded variables.

Intended for desk-scale programs (a few thousand columns at most). Pricing is
Dantzig's rule; after a run of degenerate pivots the phase falls back to
Bland's rule, which guarantees termination. The tableau is periodically
re-inverted from the original columns to limit drift, and the final primal
and dual values are always recomputed from a fresh factorization of the basis.

Duals follow the sensitivity convention ``y_i = d(objective) / d(b_i)`` in the
sense the program was posed (so for a minimization, ``<=`` rows have
``y <= 0`` and ``>=`` rows ``y >= 0``).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .program import EQ, GE, LE, SolverError, Status

_PIVOT_TOL = 1e-9
_OPT_TOL = 1e-9
_REINVERT_EVERY = 100


@dataclass
class LPOutcome:
    status: Status
    x: np.ndarray | None = None
    objective: float = math.nan
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0


class _TimeUp(Exception):
    pass


class _Standard:
    """Maps ``lb <= x <= ub`` onto ``0 <= z <= u`` columns."""

    def __init__(self, lb: np.ndarray, ub: np.ndarray):
        n = len(lb)
        self.shift = np.zeros(n)
        cols, signs, upper = [], [], []
        for j in range(n):
            lo, hi = lb[j], ub[j]
            if np.isfinite(lo):
                self.shift[j] = lo
                cols.append(j)
                signs.append(1.0)
                upper.append(hi - lo)
            elif np.isfinite(hi):
                self.shift[j] = hi
                cols.append(j)
                signs.append(-1.0)
                upper.append(np.inf)
            else:
                cols += [j, j]
                signs += [1.0, -1.0]
                upper += [np.inf, np.inf]
        self.cols = np.array(cols, dtype=int)
        self.signs = np.array(signs)
        self.upper = np.array(upper, dtype=float)
        self.n = n

    def recover(self, z: np.ndarray) -> np.ndarray:
        x = self.shift.copy()
        np.add.at(x, self.cols, self.signs * z)
        return x


def solve_dense(c, A, senses, b, lb, ub, *, feasibility_tol=1e-7, deadline=math.inf,
                max_iter=None) -> LPOutcome:
    """Minimize ``c @ x`` subject to ``A x (senses) b`` and ``lb <= x <= ub``.

    ``A`` is a dense 2-D array; ``senses`` holds ``"<="``, ``">="`` or ``"=="``.
    Raises :class:`SolverError` on numeric breakdown.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float).reshape(len(b), len(c))
    b = np.asarray(b, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    m, n = A.shape
    if np.any(lb > ub + feasibility_tol):
        return LPOutcome(Status.INFEASIBLE)

    std = _Standard(lb, ub)
    Az = A[:, std.cols] * std.signs
    bz = b - A @ std.shift
    cz = c[std.cols] * std.signs

    # slacks, row normalisation to rhs >= 0, artificials where no +1 slack exists
    slack_sign = np.array([1.0 if s == LE else -1.0 if s == GE else 0.0 for s in senses])
    row_sign = np.where(bz < 0, -1.0, 1.0)
    nz = Az.shape[1]
    slack_rows = np.flatnonzero(slack_sign != 0)
    ns = len(slack_rows)
    S = np.zeros((m, ns))
    S[slack_rows, np.arange(ns)] = slack_sign[slack_rows]
    M = np.hstack([Az, S]) * row_sign[:, None]
    rhs = bz * row_sign
    basis = np.empty(m, dtype=int)
    need_art = []
    for k, r in enumerate(slack_rows):
        if M[r, nz + k] > 0:
            basis[r] = nz + k
    slack_basic = set(slack_rows[M[slack_rows, nz + np.arange(ns)] > 0].tolist())
    for r in range(m):
        if r not in slack_basic:
            need_art.append(r)
    na = len(need_art)
    Art = np.zeros((m, na))
    for k, r in enumerate(need_art):
        Art[r, k] = 1.0
        basis[r] = nz + ns + k
    full = np.hstack([M, Art])
    ncol = full.shape[1]
    upper = np.concatenate([std.upper, np.full(ns, np.inf), np.full(na, np.inf)])
    artificial = np.zeros(ncol, dtype=bool)
    artificial[nz + ns:] = True

    tab = _Tableau(full, rhs, upper, basis, feasibility_tol, deadline, max_iter)
    try:
        if na:
            cost1 = artificial.astype(float)
            tab.run(cost1, excluded=np.zeros(ncol, dtype=bool))
            infeas = float(cost1[tab.basis] @ tab.xb)
            if infeas > feasibility_tol * max(1.0, float(np.max(np.abs(rhs), initial=0.0))):
                return LPOutcome(Status.INFEASIBLE, iterations=tab.iterations)
            tab.drive_out(artificial)
        cost2 = np.concatenate([cz, np.zeros(ns + na)])
        status = tab.run(cost2, excluded=artificial)
    except _TimeUp:
        return LPOutcome(Status.TIME_LIMIT, iterations=tab.iterations)
    if status == Status.UNBOUNDED:
        return LPOutcome(Status.UNBOUNDED, iterations=tab.iterations)

    z_full = tab.values()
    x = std.recover(z_full[:nz])
    # duals of the normalised rows from B^T y = c_B, mapped back to original rows
    B = full[:, tab.basis]
    try:
        y_norm = np.linalg.solve(B.T, cost2[tab.basis]) if m else np.zeros(0)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by reinversion
        raise SolverError("singular basis while recovering duals") from exc
    y = y_norm * row_sign
    rc = c - A.T @ y
    return LPOutcome(Status.OPTIMAL, x=x, objective=float(c @ x), duals=y,
                     reduced_costs=rc, iterations=tab.iterations)


class _Tableau:
    def __init__(self, A, b, upper, basis, feas_tol, deadline, max_iter):
        self.A = A
        self.b = b
        self.m, self.n = A.shape
        self.upper = upper
        self.basis = basis.copy()
        self.at_upper = np.zeros(self.n, dtype=bool)
        self.feas_tol = feas_tol
        self.deadline = deadline
        self.max_iter = max_iter or 50 * (self.m + self.n) + 1000
        self.iterations = 0
        self.T = A.copy()
        self.xb = b.copy()
        self.is_basic = np.zeros(self.n, dtype=bool)
        self.is_basic[self.basis] = True

    # -- linear algebra helpers ---------------------------------------------
    def reinvert(self):
        if self.m == 0:
            return
        B = self.A[:, self.basis]
        xn = np.where(self.at_upper & ~self.is_basic, self.upper, 0.0)
        xn[~np.isfinite(xn)] = 0.0
        try:
            lu = np.linalg.solve(B, np.column_stack([self.A, self.b - self.A @ xn]))
        except np.linalg.LinAlgError as exc:
            raise SolverError("basis became singular during re-inversion") from exc
        self.T = lu[:, :-1]
        self.xb = lu[:, -1]

    def values(self) -> np.ndarray:
        z = np.where(self.at_upper, self.upper, 0.0)
        z[~np.isfinite(z)] = 0.0
        z[self.basis] = self.xb
        return z

    def _pivot(self, r: int, j: int):
        T = self.T
        prow = T[r] / T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, prow)
        T[r] = prow
        leaving = self.basis[r]
        self.is_basic[leaving] = False
        self.is_basic[j] = True
        self.basis[r] = j

    def drive_out(self, artificial: np.ndarray):
        """Pivot zero-level artificials out of the basis where possible."""
        for r in range(self.m):
            if not artificial[self.basis[r]]:
                continue
            row = np.abs(self.T[r])
            row[artificial | self.is_basic] = 0.0
            j = int(np.argmax(row)) if row.size else 0
            if row.size == 0 or row[j] <= _PIVOT_TOL:
                continue  # redundant row; artificial stays basic at zero
            value = self.upper[j] if self.at_upper[j] else 0.0
            self._pivot(r, j)
            self.at_upper[j] = False
            self.xb[r] = value
        self.reinvert()

    # -- main loop ------------------------------------------------------------
    def run(self, cost: np.ndarray, excluded: np.ndarray) -> Status:
        self.reinvert()
        d = cost - cost[self.basis] @ self.T
        bland = False
        degenerate_run = 0
        since_reinvert = 0
        clean_checks = 0
        while True:
            if self.iterations >= self.max_iter:
                raise SolverError("simplex iteration limit reached")
            if time.perf_counter() > self.deadline:
                raise _TimeUp
            cand_lo = (~self.is_basic) & (~excluded) & (~self.at_upper) & (d < -_OPT_TOL)
            cand_hi = (~self.is_basic) & (~excluded) & self.at_upper & (d > _OPT_TOL)
            cand = cand_lo | cand_hi
            if not cand.any():
                # confirm optimality on a fresh factorisation before stopping
                self.reinvert()
                d = cost - cost[self.basis] @ self.T
                cand_lo = (~self.is_basic) & (~excluded) & (~self.at_upper) & (d < -_OPT_TOL)
                cand_hi = (~self.is_basic) & (~excluded) & self.at_upper & (d > _OPT_TOL)
                cand = cand_lo | cand_hi
                primal_ok = self._primal_ok()
                if not cand.any() or clean_checks > 5:
                    if not primal_ok:
                        self.xb = np.clip(self.xb, 0.0, self.upper[self.basis])
                    return Status.OPTIMAL
                clean_checks += 1
            idx = np.flatnonzero(cand)
            if bland:
                j = int(idx[0])
            else:
                j = int(idx[np.argmax(np.abs(d[idx]))])
            direction = -1.0 if self.at_upper[j] else 1.0
            alpha = direction * self.T[:, j]
            r, theta = self._ratio(alpha, bland)
            flip = self.upper[j]
            if r < 0 and not np.isfinite(flip):
                return Status.UNBOUNDED
            self.iterations += 1
            if r < 0 or flip <= theta:
                self.xb -= flip * alpha
                self.at_upper[j] = not self.at_upper[j]
                degenerate_run = 0
                continue
            theta = max(theta, 0.0)
            leaving = self.basis[r]
            leaves_upper = alpha[r] < 0
            entering_value = (self.upper[j] - theta) if self.at_upper[j] else theta
            self.xb -= theta * alpha
            self._pivot(r, j)
            self.at_upper[j] = False
            self.at_upper[leaving] = bool(leaves_upper)
            self.xb[r] = entering_value
            d = d - d[j] * self.T[r]
            degenerate_run = degenerate_run + 1 if theta <= 1e-12 else 0
            if degenerate_run > 50 + self.m // 2:
                bland = True
            since_reinvert += 1
            if since_reinvert >= _REINVERT_EVERY:
                self.reinvert()
                d = cost - cost[self.basis] @ self.T
                since_reinvert = 0

    def _primal_ok(self) -> bool:
        ub = self.upper[self.basis]
        tol = self.feas_tol * (1.0 + np.abs(self.xb))
        return bool(np.all(self.xb >= -tol) and np.all(self.xb <= ub + tol))

    def _ratio(self, alpha: np.ndarray, bland: bool) -> tuple[int, float]:
        """Harris two-pass ratio test; returns (row, step) or (-1, inf)."""
        if self.m == 0:
            return -1, math.inf
        ub = self.upper[self.basis]
        xb = self.xb
        tol = self.feas_tol
        dec = alpha > _PIVOT_TOL
        inc = (alpha < -_PIVOT_TOL) & np.isfinite(ub)
        if not dec.any() and not inc.any():
            return -1, math.inf
        relaxed = np.full(self.m, np.inf)
        relaxed[dec] = (np.maximum(xb[dec], 0.0) + tol) / alpha[dec]
        relaxed[inc] = (ub[inc] - np.minimum(xb[inc], ub[inc]) + tol) / (-alpha[inc])
        limit = relaxed.min()
        exact = np.full(self.m, np.inf)
        exact[dec] = np.maximum(xb[dec], 0.0) / alpha[dec]
        exact[inc] = (ub[inc] - np.minimum(xb[inc], ub[inc])) / (-alpha[inc])
        eligible = np.flatnonzero(exact <= limit)
        if bland:
            r = int(eligible[np.argmin(self.basis[eligible])])
        else:
            r = int(eligible[np.argmax(np.abs(alpha[eligible]))])
        return r, float(exact[r])
