"""Bounded-variable revised simplex (primal and dual) for LP relaxations.

The engine keeps one logical column per row (``A x - r = 0`` with ``r``
boxed by the row bounds), so every basis starts from ``-I`` and all
variables, structural or logical, are treated uniformly as boxed columns.
Phase 1 adds one artificial per violated row. The basis inverse is a sparse
LU (SuperLU via scipy) followed by a product-form eta file that is folded
back in every ``refactor_every`` pivots.

A solved engine can be re-solved after bound or cost changes: a primal
feasible basis goes straight to phase 2, a dual feasible one through the
dual simplex. Branch-and-bound relies on the latter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from ._kernels import AT_LOWER, AT_UPPER, AT_ZERO, BASIC
from .problem import MilpProblem

FIXED = 4

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
ITERATION_LIMIT = "IterationLimit"

FEAS_TOL = 1e-7
OPT_TOL = 1e-7
PIV_TOL = 1e-9
DEGENERATE_SWITCH = 50


@dataclass
class LpSolution:
    values: np.ndarray
    objective: float
    status: str
    iterations: int
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    basis: tuple | None = None
    trace: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class SingularBasis(RuntimeError):
    pass


class SimplexEngine:
    """Stateful LP solver over ``min c x, row_lo <= A x <= row_hi, lb <= x <= ub``."""

    def __init__(self, A, c, lb, ub, row_lo, row_hi, *, tol=FEAS_TOL, opt_tol=OPT_TOL,
                 max_iters=None, refactor_every=64, use_numba=None, record_trace=False):
        A = sp.csr_matrix(A, dtype=float)
        self.m, self.n = A.shape
        m, n = self.m, self.n
        self.A = A
        self.AT = A.T.tocsr()
        self.Acsc = A.tocsc()
        self.c = np.asarray(c, float).copy()
        self.tol = tol
        self.opt_tol = opt_tol
        self.max_iters = max_iters if max_iters is not None else max(5000, 50 * (m + n))
        self.refactor_every = refactor_every
        self.kern = _kernels.select(use_numba)
        self.record_trace = record_trace
        N = n + 2 * m
        self.N = N
        self.lb = np.empty(N)
        self.ub = np.empty(N)
        self.lb[:n], self.ub[:n] = lb, ub
        self.lb[n:n + m], self.ub[n:n + m] = row_lo, row_hi
        self.lb[n + m:] = 0.0
        self.ub[n + m:] = 0.0
        self.sigma = np.ones(m)
        self._build_matrix()
        self.head = np.arange(n, n + m)
        self.status = np.empty(N, np.int8)
        self.x = np.zeros(N)
        self._reset_nonbasic(np.arange(N))
        self.status[self.head] = BASIC
        self.xb = np.zeros(m)
        self.lu = None
        self.eta_rows = np.zeros(refactor_every + 1, np.int64)
        self.eta_vals = np.zeros((refactor_every + 1, max(m, 1)))
        self.eta_count = 0
        self.iterations = 0
        self.phase_one_needed = True
        self.trace: list[float] = []

    # -- construction -----------------------------------------------------

    @classmethod
    def from_problem(cls, problem: MilpProblem, **kw) -> "SimplexEngine":
        return cls(problem.A, problem.c, problem.lb, problem.ub, problem.row_lo, problem.row_hi, **kw)

    def _build_matrix(self):
        m = self.m
        eye = sp.identity(m, format="csc")
        self.M = sp.hstack([self.Acsc, -eye, sp.diags(self.sigma, format="csc")], format="csc")
        self.M.sort_indices()

    def _reset_nonbasic(self, cols):
        for j in cols:
            lo, hi = self.lb[j], self.ub[j]
            if lo == hi:
                self.status[j] = FIXED
                self.x[j] = lo
            elif math.isfinite(lo):
                self.status[j] = AT_LOWER
                self.x[j] = lo
            elif math.isfinite(hi):
                self.status[j] = AT_UPPER
                self.x[j] = hi
            else:
                self.status[j] = AT_ZERO
                self.x[j] = 0.0

    # -- linear algebra ---------------------------------------------------

    def _col(self, j):
        v = np.zeros(self.m)
        M = self.M
        p0, p1 = M.indptr[j], M.indptr[j + 1]
        v[M.indices[p0:p1]] = M.data[p0:p1]
        return v

    def _refactor(self):
        B = self.M[:, self.head].tocsc()
        try:
            self.lu = spla.splu(B, permc_spec="COLAMD")
        except RuntimeError as exc:  # singular
            raise SingularBasis(str(exc)) from exc
        self.eta_count = 0
        self._recompute_xb()

    def _recompute_xb(self):
        xn = self.x.copy()
        xn[self.head] = 0.0
        rhs = -(self.M @ xn)
        self.xb = self._ftran(rhs)

    def _ftran(self, b):
        x = self.lu.solve(np.asarray(b, float))
        if self.eta_count:
            x = self.kern.ftran_etas(x, self.eta_rows, self.eta_vals, self.eta_count)
        return x

    def _btran(self, cb):
        y = np.array(cb, float)
        if self.eta_count:
            y = self.kern.btran_etas(y, self.eta_rows, self.eta_vals, self.eta_count)
        return self.lu.solve(y, trans="T")

    def _price_vector(self, y):
        """``M^T y`` for every column."""
        n, m = self.n, self.m
        out = np.empty(self.N)
        out[:n] = self.AT @ y
        out[n:n + m] = -y
        out[n + m:] = self.sigma * y
        return out

    def _push_eta(self, row, alpha):
        k = self.eta_count
        self.eta_rows[k] = row
        self.eta_vals[k, :] = alpha
        self.eta_count = k + 1

    def _pivot_in(self, row, q, alpha, leave_to_upper):
        leaving = self.head[row]
        bound = self.ub[leaving] if leave_to_upper else self.lb[leaving]
        self.x[leaving] = bound
        if self.lb[leaving] == self.ub[leaving]:
            self.status[leaving] = FIXED
        else:
            self.status[leaving] = AT_UPPER if leave_to_upper else AT_LOWER
        self.head[row] = q
        self.status[q] = BASIC
        self._push_eta(row, alpha)
        if self.eta_count >= self.refactor_every:
            self._refactor()

    # -- public state manipulation ---------------------------------------

    def set_bounds(self, lb, ub):
        """Replace structural bounds, keeping the basis."""
        n = self.n
        self.lb[:n] = lb
        self.ub[:n] = ub
        nb = np.flatnonzero(self.status[:n] != BASIC)
        for j in nb:
            lo, hi = self.lb[j], self.ub[j]
            st = self.status[j]
            if lo == hi:
                self.status[j] = FIXED
                self.x[j] = lo
            elif st == AT_UPPER and math.isfinite(hi):
                self.x[j] = hi
            elif st in (AT_LOWER, FIXED) and math.isfinite(lo):
                self.status[j] = AT_LOWER
                self.x[j] = lo
            else:
                self._reset_nonbasic([j])

    def set_costs(self, c):
        self.c = np.asarray(c, float).copy()

    def get_basis(self):
        return self.head.copy(), self.status.copy(), self.sigma.copy()

    def set_basis(self, basis):
        head, status, sigma = basis
        if not np.array_equal(sigma, self.sigma):
            self.sigma = sigma.copy()
            self._build_matrix()
        self.head = head.copy()
        self.status = status.copy()
        nb = np.flatnonzero(self.status != BASIC)
        for j in nb:
            st = self.status[j]
            lo, hi = self.lb[j], self.ub[j]
            if lo == hi:
                self.status[j] = FIXED
                self.x[j] = lo
            elif st == AT_UPPER and math.isfinite(hi):
                self.x[j] = hi
            elif st in (AT_LOWER, FIXED) and math.isfinite(lo):
                self.status[j] = AT_LOWER
                self.x[j] = lo
            else:
                self._reset_nonbasic([j])
        self.phase_one_needed = False

    # -- solving ----------------------------------------------------------

    def _primal_infeasibility(self):
        lbb, ubb = self.lb[self.head], self.ub[self.head]
        return float(np.max(np.maximum(lbb - self.xb, 0) + np.maximum(self.xb - ubb, 0), initial=0.0))

    def _full_costs(self, phase):
        cc = np.zeros(self.N)
        if phase == 1:
            cc[self.n + self.m:] = 1.0
        else:
            cc[:self.n] = self.c
        return cc

    def _reduced_costs(self, cc):
        y = self._btran(cc[self.head])
        d = cc - self._price_vector(y)
        d[self.head] = 0.0
        return d, y

    def _cold_start(self):
        """Slack basis plus artificials on violated rows."""
        n, m = self.n, self.m
        self.lb[n + m:] = 0.0
        self.ub[n + m:] = 0.0
        self._reset_nonbasic(np.arange(n))
        act = self.A @ self.x[:n]
        lo, hi = self.lb[n:n + m], self.ub[n:n + m]
        sigma = np.ones(m)
        head = np.arange(n, n + m)
        below = act < lo - self.tol
        above = act > hi + self.tol
        sigma[above] = -1.0
        self.sigma = sigma
        self._build_matrix()
        viol = np.flatnonzero(below | above)
        self.head = head
        self.status[n:] = 0
        self._reset_nonbasic(np.arange(n, self.N))
        self.status[head] = BASIC
        for i in viol:
            r = n + i
            a = n + m + i
            self.status[r] = AT_LOWER if below[i] else AT_UPPER
            self.x[r] = lo[i] if below[i] else hi[i]
            self.ub[a] = math.inf
            self.status[a] = BASIC
            self.head[i] = a
        for i in range(m):
            a = n + m + i
            if self.status[a] != BASIC:
                self.status[a] = FIXED
                self.x[a] = 0.0
        self._refactor()
        return len(viol) > 0

    def _retire_artificials(self):
        n, m = self.n, self.m
        for i in range(m):
            a = n + m + i
            self.ub[a] = 0.0
            if self.status[a] != BASIC:
                self.status[a] = FIXED
                self.x[a] = 0.0

    def _primal(self, phase):
        cc = self._full_costs(phase)
        kern = self.kern
        degenerate = 0
        while True:
            if self.iterations >= self.max_iters:
                return ITERATION_LIMIT
            d, _ = self._reduced_costs(cc)
            d[self.status == FIXED] = 0.0
            q = kern.price(d, self.status, self.opt_tol, degenerate >= DEGENERATE_SWITCH)
            if q < 0:
                return OPTIMAL
            st = self.status[q]
            direction = 1.0 if (st == AT_LOWER or (st == AT_ZERO and d[q] < 0)) else -1.0
            alpha = self._ftran(self._col(q))
            lbb, ubb = self.lb[self.head], self.ub[self.head]
            row, step, up = kern.primal_ratio(self.xb, lbb, ubb, alpha, direction, self.tol, PIV_TOL)
            span = self.ub[q] - self.lb[q]
            self.iterations += 1
            if row < 0 and not math.isfinite(span):
                return UNBOUNDED
            if math.isfinite(span) and span <= step:
                self.xb -= direction * span * alpha
                self.x[q] += direction * span
                self.status[q] = AT_UPPER if direction > 0 else AT_LOWER
                degenerate = 0
            else:
                self.xb -= direction * step * alpha
                newval = self.x[q] + direction * step
                self._pivot_in(row, q, alpha, up)
                if self.eta_count:
                    self.xb[row] = newval
                else:  # refactor happened inside _pivot_in
                    pass
                degenerate = degenerate + 1 if step <= 1e-12 else 0
            if self.record_trace and phase == 2:
                self.trace.append(self._objective_now())

    def _dual(self):
        cc = self._full_costs(2)
        kern = self.kern
        d, _ = self._reduced_costs(cc)
        degenerate = 0
        while True:
            if self.iterations >= self.max_iters:
                return ITERATION_LIMIT
            lbb, ubb = self.lb[self.head], self.ub[self.head]
            below = lbb - self.xb
            above = self.xb - ubb
            infeas = np.maximum(below, above)
            bland = degenerate >= DEGENERATE_SWITCH
            if bland:
                # smallest variable index among the infeasible rows
                bad = np.flatnonzero(infeas > self.tol)
                if bad.size == 0:
                    return OPTIMAL
                r = int(bad[np.argmin(self.head[bad])])
            else:
                r = int(np.argmax(infeas))
                if infeas[r] <= self.tol:
                    return OPTIMAL
            sign = 1.0 if below[r] > 0 else -1.0
            e = np.zeros(self.m)
            e[r] = 1.0
            rho = self._btran(e)
            arow = self._price_vector(rho)
            arow[self.head] = 0.0
            q = kern.dual_ratio(d, arow, self.status, sign, self.opt_tol, PIV_TOL, bland)
            self.iterations += 1
            if q < 0:
                self._borderline = infeas[r] < 1e-5
                return INFEASIBLE
            alpha = self._ftran(self._col(q))
            theta_d = d[q] / arow[q]
            degenerate = degenerate + 1 if abs(theta_d) <= 1e-12 else 0
            leaving = self.head[r]
            d -= theta_d * arow
            d[leaving] = -theta_d
            d[q] = 0.0
            bound = lbb[r] if sign > 0 else ubb[r]
            t = (self.xb[r] - bound) / alpha[r]
            self.xb -= t * alpha
            newval = self.x[q] + t
            eta_before = self.eta_count
            self._pivot_in(r, q, alpha, leave_to_upper=sign < 0)
            if self.eta_count > eta_before:
                self.xb[r] = newval
            else:
                d, _ = self._reduced_costs(cc)

    def _objective_now(self):
        x = self.x.copy()
        x[self.head] = self.xb
        return float(self.c @ x[:self.n])

    def solve(self, warm=True) -> str:
        """Solve from the current basis when possible, else from scratch."""
        status = None
        self._borderline = False
        self.iterations = 0
        if warm and not self.phase_one_needed:
            try:
                self._refactor()
                if self._primal_infeasibility() <= self.tol:
                    status = self._primal(2)
                else:
                    d, _ = self._reduced_costs(self._full_costs(2))
                    st = self.status
                    dual_bad = np.concatenate([
                        -d[st == AT_LOWER], d[st == AT_UPPER], np.abs(d[st == AT_ZERO])
                    ])
                    if dual_bad.size == 0 or dual_bad.max() <= self.opt_tol:
                        status = self._dual()
                        if status == OPTIMAL:
                            status = self._primal(2)
            except SingularBasis:
                status = None
        if status == INFEASIBLE and self._borderline:
            status = None
        if status is None:
            status = self._solve_cold()
        self.last_status = status
        return status

    def _solve_cold(self):
        try:
            needs_phase1 = self._cold_start()
        except SingularBasis:  # pragma: no cover - slack basis is never singular
            raise
        if needs_phase1:
            st = self._primal(1)
            if st != OPTIMAL:
                return st
            art = self.x.copy()
            art[self.head] = self.xb
            infeas = float(art[self.n + self.m:].sum())
            if infeas > self.tol * max(1.0, math.sqrt(self.m)):
                self.phase_one_needed = True
                return INFEASIBLE
        self._retire_artificials()
        self.phase_one_needed = False
        return self._primal(2)

    # -- results ----------------------------------------------------------

    def values(self):
        x = self.x.copy()
        x[self.head] = self.xb
        return x[:self.n]

    def solution(self, status) -> LpSolution:
        x = self.values()
        obj = float(self.c @ x) if status == OPTIMAL else math.nan
        duals = rc = None
        if status == OPTIMAL:
            cc = self._full_costs(2)
            d, y = self._reduced_costs(cc)
            duals = y
            rc = d[:self.n]
        return LpSolution(
            values=x,
            objective=obj,
            status=status,
            iterations=self.iterations,
            duals=duals,
            reduced_costs=rc,
            basis=self.get_basis() if status == OPTIMAL else None,
            trace=list(self.trace),
        )


def solve_lp(problem: MilpProblem, tol: float = FEAS_TOL, max_iters: int | None = None,
             basis=None, use_numba=None, record_trace=False) -> LpSolution:
    """Solve the LP relaxation of ``problem`` (integrality is ignored)."""
    eng = SimplexEngine.from_problem(problem, tol=tol, opt_tol=tol, max_iters=max_iters,
                                     use_numba=use_numba, record_trace=record_trace)
    if basis is not None:
        eng.set_basis(basis)
    status = eng.solve(warm=basis is not None)
    sol = eng.solution(status)
    if sol.optimal:
        sol.objective += problem.offset
    return sol
