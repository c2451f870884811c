"""LP-based branch-and-bound for :class:`~riskrestore.problem.MilpProblem`.

Best-first search on LP bounds, diving depth-first until the first
incumbent. Every node LP is warm-started from its parent's basis with the
dual simplex.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .problem import MilpProblem
from .simplex import INFEASIBLE, OPTIMAL, SimplexEngine

# statuses
OPTIMAL_STATUS = "Optimal"
GAP_LIMIT = "GapLimit"
TIME_LIMIT = "TimeLimit"
NODE_LIMIT = "NodeLimit"
INFEASIBLE_STATUS = "Infeasible"

INT_TOL = 1e-6
FEAS_CHECK_TOL = 1e-6


class InfeasibleFixing(ValueError):
    """A fixing contradicts the bounds or leaves the problem infeasible."""


@dataclass
class LogRecord:
    elapsed: float
    nodes: int
    incumbent: float
    bound: float
    gap: float
    seq: int = 0


@dataclass
class MilpSolution:
    values: np.ndarray | None
    objective: float
    best_bound: float
    mip_gap: float
    status: str
    node_count: int
    wall_time: float
    log: list[LogRecord] = field(default_factory=list)
    root_bound: float = math.nan
    root_basis: tuple | None = None

    @property
    def feasible(self) -> bool:
        return self.values is not None


def mip_gap(incumbent: float, bound: float) -> float:
    if not math.isfinite(incumbent):
        return math.inf
    if not math.isfinite(bound):
        return math.inf
    return abs(incumbent - bound) / max(1e-9, abs(incumbent))


def write_convergence_csv(path, log) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["elapsed_s", "nodes", "incumbent", "best_bound", "gap"])
        for rec in log:
            wr.writerow([f"{rec.elapsed:.6f}", rec.nodes, repr(float(rec.incumbent)), repr(float(rec.bound)),
                         repr(float(rec.gap))])


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    depth: int = field(compare=False)
    changes: tuple = field(compare=False)  # ((col, lo, hi), ...) relative to the root box
    basis: tuple | None = field(compare=False, default=None)


class BranchAndBound:
    def __init__(self, problem: MilpProblem, *, gap_tol=1e-6, time_limit=math.inf, node_limit=None,
                 heuristics=True, heuristic_every=20, int_tol=INT_TOL, use_numba=None, basis=None,
                 cutoff=math.inf, on_log=None, clock=time.perf_counter, start_time=None):
        self.p = problem
        self.gap_tol = gap_tol
        self.time_limit = time_limit
        self.node_limit = node_limit
        self.heuristics = heuristics
        self.heuristic_every = heuristic_every
        self.int_tol = int_tol
        self.eng = SimplexEngine.from_problem(problem, use_numba=use_numba)
        self.warm_basis = basis
        self.cutoff = cutoff
        self.on_log = on_log
        self.clock = clock
        self.t0 = clock() if start_time is None else start_time
        self.ints = np.flatnonzero(problem.integer_mask)
        self.classes = None if problem.branch_class is None else np.asarray(problem.branch_class)[self.ints]
        self.inc_x = None
        self.inc = math.inf
        self.log: list[LogRecord] = []
        self._seq = itertools.count()
        self._logseq = itertools.count()
        self.nodes = 0
        self.last_bound = -math.inf
        self.slack_bound = math.inf  # nodes dropped only because of the gap tolerance

    # -- helpers ------------------------------------------------------------

    def elapsed(self):
        return self.clock() - self.t0

    def _box(self, changes):
        lb, ub = self.p.lb.copy(), self.p.ub.copy()
        for col, lo, hi in changes:
            lb[col] = max(lb[col], lo)
            ub[col] = min(ub[col], hi)
        return lb, ub

    def _solve_box(self, lb, ub, basis):
        eng = self.eng
        eng.set_bounds(lb, ub)
        if basis is not None:
            eng.set_basis(basis)
        st = eng.solve(warm=basis is not None or not eng.phase_one_needed)
        if st not in (OPTIMAL, INFEASIBLE):
            st = eng.solve(warm=False)
        return st

    def _prune_level(self):
        if not math.isfinite(self.inc):
            return self.cutoff
        return self.inc - max(1e-9 * max(1.0, abs(self.inc)), self.gap_tol * abs(self.inc))

    def _try_incumbent(self, x, source=""):
        x = np.asarray(x, float).copy()
        ints = self.ints
        x[ints] = np.round(x[ints])
        if self.p.violation(x, self.int_tol) > FEAS_CHECK_TOL:
            return False
        obj = self.p.objective(x)
        if obj < self.inc - 1e-12 * max(1.0, abs(obj)):
            self.inc = obj
            self.inc_x = x
            return True
        return False

    def _record(self, bound):
        bound = max(bound, self.last_bound)
        if math.isfinite(self.inc):
            bound = min(bound, self.inc)
        self.last_bound = bound
        rec = LogRecord(self.elapsed(), self.nodes, self.inc, bound, mip_gap(self.inc, bound), next(self._logseq))
        self.log.append(rec)
        if self.on_log is not None:
            self.on_log(rec)

    def _global_bound(self):
        if not self.open:
            b = math.inf
        elif self.dfs:
            b = min(n.bound for n in self.open)
        else:
            b = self.open[0].bound
        b = min(b, self.slack_bound)
        if math.isfinite(self.inc):
            b = min(b, self.inc)
        return b

    def _fractional(self, x):
        """Most fractional integer column of the lowest branching class, or -1."""
        xi = x[self.ints]
        frac = np.abs(xi - np.round(xi))
        if frac.size == 0 or frac.max() <= self.int_tol:
            return -1
        frac_mask = frac > self.int_tol
        if self.classes is not None:
            top = self.classes[frac_mask].min()
            frac_mask &= self.classes == top
        score = np.where(frac_mask, frac, -1.0)
        return int(self.ints[int(np.argmax(score))])

    def _heuristic(self, x, lb, ub):
        """Fix integers by rounding and re-solve the continuous part."""
        eng = self.eng
        saved = eng.get_basis()
        found = False
        for mode in ("nearest", "floor"):
            xi = x[self.ints]
            vals = np.round(xi) if mode == "nearest" else np.floor(xi + self.int_tol)
            vals = np.clip(vals, lb[self.ints], ub[self.ints])
            hl, hu = lb.copy(), ub.copy()
            hl[self.ints] = vals
            hu[self.ints] = vals
            eng.set_bounds(hl, hu)
            eng.set_basis(saved)
            st = eng.solve(warm=True)
            if st == OPTIMAL and self._try_incumbent(eng.values(), mode):
                found = True
        eng.set_bounds(lb, ub)
        eng.set_basis(saved)
        return found

    # -- main loop ----------------------------------------------------------

    def run(self) -> MilpSolution:
        p = self.p
        root_lb, root_ub = p.lb.copy(), p.ub.copy()
        st = self._solve_box(root_lb, root_ub, self.warm_basis)
        self.nodes = 1
        if st != OPTIMAL:
            status = INFEASIBLE_STATUS if st == INFEASIBLE else st
            return MilpSolution(None, math.inf, math.inf, math.inf, status, 1, self.elapsed(), self.log)
        x = self.eng.values()
        root_bound = float(p.c @ x + p.offset)
        root_basis = self.eng.get_basis()
        if self._fractional(x) < 0:
            self._try_incumbent(x, "root")
        elif self.heuristics:
            self._heuristic(x, root_lb, root_ub)
        self._record(root_bound)

        # depth-first (LIFO) until the first incumbent, best-first afterwards
        self.dfs = self.inc_x is None
        self.open: list[_Node] = []
        self._branch(_Node(root_bound, next(self._seq), 0, (), root_basis), x)

        status = OPTIMAL_STATUS
        while self.open:
            if self.elapsed() > self.time_limit:
                status = TIME_LIMIT
                break
            if self.node_limit is not None and self.nodes >= self.node_limit:
                status = NODE_LIMIT
                break
            if math.isfinite(self.inc) and mip_gap(self.inc, self._global_bound()) <= self.gap_tol:
                status = GAP_LIMIT
                break
            node = self.open.pop() if self.dfs else heapq.heappop(self.open)
            if node.bound >= self._prune_level():
                self._note_slack(node.bound)
                continue
            lb, ub = self._box(node.changes)
            st = self._solve_box(lb, ub, node.basis)
            self.nodes += 1
            if st != OPTIMAL:
                self._record(self._global_bound())
                continue
            x = self.eng.values()
            bound = max(float(p.c @ x + p.offset), node.bound)
            node.bound = bound
            node.basis = self.eng.get_basis()
            if bound >= self._prune_level():
                self._note_slack(bound)
            elif self._fractional(x) < 0:
                self._try_incumbent(x, "lp")
            else:
                if self.heuristics and self.nodes % self.heuristic_every == 0:
                    self._heuristic(x, lb, ub)
                self._branch(node, x)
            if self.dfs and self.inc_x is not None:
                self.dfs = False
                heapq.heapify(self.open)
            self._record(self._global_bound())

        bound = self._global_bound()
        if not self.open and status == OPTIMAL_STATUS:
            bound = min(self.slack_bound, self.inc)
        self._record(bound)
        best_bound = self.last_bound
        if self.inc_x is None:
            if status == OPTIMAL_STATUS:
                status = INFEASIBLE_STATUS
            return MilpSolution(None, math.inf, best_bound, math.inf, status, self.nodes, self.elapsed(),
                                self.log, root_bound, root_basis)
        return MilpSolution(self.inc_x, self.inc, best_bound, mip_gap(self.inc, best_bound), status,
                            self.nodes, self.elapsed(), self.log, root_bound, root_basis)

    def _note_slack(self, bound):
        # a node discarded by the relative gap tolerance, not by dominance
        if bound < self.inc - 1e-9 * max(1.0, abs(self.inc)):
            self.slack_bound = min(self.slack_bound, bound)

    def _branch(self, node, x):
        j = self._fractional(x)
        if j < 0:
            return
        v = x[j]
        down = (j, -math.inf, math.floor(v))
        up = (j, math.ceil(v), math.inf)
        # the rounding-side child goes last so a depth-first pop takes it first
        order = (down, up) if v - math.floor(v) >= 0.5 else (up, down)
        for ch in order:
            child = _Node(node.bound, next(self._seq), node.depth + 1, node.changes + (ch,), node.basis)
            if self.dfs:
                self.open.append(child)
            else:
                heapq.heappush(self.open, child)


def solve_milp(problem: MilpProblem, gap_tol: float = 1e-6, time_limit: float = math.inf,
               node_limit: int | None = None, **kw) -> MilpSolution:
    """Solve ``problem`` to ``gap_tol`` relative gap.

    Returns the incumbent, the best bound and the convergence log. Statuses:
    Optimal (tree exhausted), GapLimit, TimeLimit, NodeLimit, Infeasible.
    """
    return BranchAndBound(problem, gap_tol=gap_tol, time_limit=time_limit, node_limit=node_limit, **kw).run()


def fix_columns(problem: MilpProblem, fixings: dict) -> MilpProblem:
    """Pin columns (index or name) to values; contradictions raise InfeasibleFixing."""
    lb, ub = problem.lb.copy(), problem.ub.copy()
    for key, val in fixings.items():
        col = problem.index(key) if isinstance(key, str) else int(key)
        val = float(val)
        tol = 1e-9 * max(1.0, abs(val))
        if val < lb[col] - tol or val > ub[col] + tol:
            raise InfeasibleFixing(
                f"{problem.names[col]} = {val:g} lies outside its current range [{lb[col]:g}, {ub[col]:g}]")
        lb[col] = ub[col] = val
    return problem.with_bounds(lb, ub)


def fix_and_solve(problem: MilpProblem, fixings: dict, **kw) -> MilpSolution:
    """Solve with the given columns pinned. An infeasible result raises InfeasibleFixing."""
    fixed = fix_columns(problem, fixings)
    sol = solve_milp(fixed, **kw)
    if sol.status == INFEASIBLE_STATUS:
        raise InfeasibleFixing("problem is infeasible under the given fixings")
    return sol
