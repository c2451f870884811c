"""Scenario decomposition: Lagrangian dual bounds inside a branch-and-bound over repair modes.

Each scenario gets its own copy of the first-stage columns (repair modes
``x`` and the value-at-risk ``nu``). The copies are tied together by

* one compound row block for ``x``: ``(sum_{j>=2} p_j) x_1 - sum_{j>=2} p_j x_j = 0``,
  i.e. ``sum_j H_j x_j = 0`` with ``H_1 = (1 - p_1) I`` and ``H_j = -p_j I``;
* ``S - 1`` rows ``nu_1 - nu_j = 0`` for ``nu`` (``sum_j K_j nu_j = 0``).

Relaxing both with multipliers ``(lam1, lam2)`` splits the problem into
scenario blocks whose optimal values sum to a lower bound. The block
objective is ``f_j - (H_j' lam1) . x_j - (K_j' lam2) nu_j``, so the
Lagrangian is ``sum_j f_j - lam1 . sum_j H_j x_j - lam2 . sum_j K_j nu_j`` and
its supergradient is ``-(sum H_j x_j, sum K_j nu_j)``.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bnb import (
    GAP_LIMIT,
    INFEASIBLE_STATUS,
    NODE_LIMIT,
    OPTIMAL_STATUS,
    TIME_LIMIT,
    LogRecord,
    MilpSolution,
    mip_gap,
    solve_milp,
)
from .formulation import (
    RiskConfig,
    build_extensive,
    build_scenario_subproblem,
    build_ws_problem,
    fix_first_stage,
    forest_certificate,
)
from .metrics import cvar

log = logging.getLogger(__name__)

STALL_ITERS = 5
GRAD_TOL = 1e-8
AGREE_TOL = 1e-6


@dataclass
class Multipliers:
    """Multipliers of the relaxed copy-consistency rows."""

    lam1: np.ndarray  # one entry per x component
    lam2: np.ndarray  # one entry per row nu_1 = nu_j, j >= 2
    step: float = 1.0

    def __post_init__(self):
        self.lam1 = np.asarray(self.lam1, float)
        self.lam2 = np.asarray(self.lam2, float)
        if not (np.all(np.isfinite(self.lam1)) and np.all(np.isfinite(self.lam2))):
            raise ValueError("multipliers must be finite")

    @classmethod
    def zeros(cls, dim_x: int, num_scenarios: int, step: float = 1.0) -> "Multipliers":
        return cls(np.zeros(dim_x), np.zeros(max(num_scenarios - 1, 0)), step)

    def copy(self) -> "Multipliers":
        return Multipliers(self.lam1.copy(), self.lam2.copy(), self.step)

    def check(self, dim_x: int, num_scenarios: int) -> None:
        if self.lam1.shape != (dim_x,) or self.lam2.shape != (max(num_scenarios - 1, 0),):
            raise ValueError(
                f"multiplier shapes {self.lam1.shape}/{self.lam2.shape} do not match "
                f"{dim_x} x components and {num_scenarios} scenarios")


@dataclass
class ScenarioCopy:
    x: np.ndarray
    nu: float
    values: np.ndarray
    objective: float
    bound: float


@dataclass(order=True)
class DdNode:
    dual_bound: float
    id: int
    fixings: dict = field(compare=False, default_factory=dict)  # x component -> 0/1
    depth: int = field(compare=False, default=0)
    parent: int | None = field(compare=False, default=None)
    multipliers: Multipliers | None = field(compare=False, default=None)
    scenario_solutions: list = field(compare=False, default_factory=list)
    bases: list | None = field(compare=False, default=None)


@dataclass
class DualResult:
    bound: float
    multipliers: Multipliers
    solutions: list
    iterations: int
    infeasible: bool = False
    stopped: str = ""  # "agree", "cutoff", "grad", "iters", "time"


class DecomposedModel:
    """Scenario blocks, copy-consistency algebra and the fixed-``x`` evaluator."""

    def __init__(self, net, scenarios, fleet, risk: RiskConfig, horizon=None, *, candidates=None,
                 split_copies=True, sub_gap=1e-6, recourse_gap=1e-9, use_numba=None):
        self.net = net
        self.scenarios = list(scenarios)
        if not self.scenarios:
            raise ValueError("need at least one scenario")
        if horizon is None:
            horizon = getattr(scenarios, "horizon", None)
        self.horizon = int(horizon)
        self.fleet = fleet
        self.risk = risk
        self.candidates = candidates
        self.sub_gap = sub_gap
        self.recourse_gap = recourse_gap
        self.use_numba = use_numba
        self.probs = np.array([sc.probability for sc in self.scenarios])
        self.blocks = [
            build_scenario_subproblem(net, sc, fleet, risk, split_copies=split_copies, horizon=self.horizon,
                                      candidates=candidates)
            for sc in self.scenarios
        ]
        cat = self.blocks[0].catalog
        self.x_keys = cat.x_keys
        self.dim = len(self.x_keys)
        self.rmax = cat.rmax
        # with lam = 0 nu carries no cost, so its copies need not agree
        self.nu_rows_active = risk.lam > 0
        self._ws = [None] * len(self.scenarios)
        self._cache: dict = {}

    @property
    def num_scenarios(self) -> int:
        return len(self.scenarios)

    # -- copy-consistency algebra --------------------------------------------

    def slices(self, mult: Multipliers):
        """Per-scenario ``(H_j' lam1, K_j' lam2)``."""
        p = self.probs
        out = []
        for j in range(self.num_scenarios):
            if j == 0:
                mx = (1.0 - p[0]) * mult.lam1
                mnu = float(mult.lam2.sum())
            else:
                mx = -p[j] * mult.lam1
                mnu = -float(mult.lam2[j - 1])
            out.append((mx, mnu))
        return out

    def residuals(self, xs, nus):
        """``(sum_j H_j x_j, sum_j K_j nu_j)``."""
        p = self.probs
        xs = np.asarray(xs, float)
        nus = np.asarray(nus, float)
        rx = (1.0 - p[0]) * xs[0] - (p[1:, None] * xs[1:]).sum(axis=0) if len(xs) > 1 else np.zeros(self.dim)
        rnu = nus[0] - nus[1:]
        return rx, rnu

    # -- scenario blocks -------------------------------------------------------

    def block(self, j: int, mult: Multipliers, fixings: dict):
        base = self.blocks[j]
        cat = base.catalog
        mx, mnu = self.slices(mult)[j]
        c = base.c.copy()
        c[cat.x_cols] -= mx
        c[cat.nu] -= mnu
        lb, ub = base.lb.copy(), base.ub.copy()
        cols = cat.x_cols
        for k, v in fixings.items():
            lb[cols[k]] = ub[cols[k]] = float(v)
        return base.with_objective(c).with_bounds(lb, ub)

    # -- fixed-x evaluation ----------------------------------------------------

    def recourse(self, j: int, x: tuple):
        """Best restoration of scenario ``j`` with the repair modes pinned to ``x``.

        Returns ``(restoration, solution)``; restoration is ``None`` when no
        schedule completes the chosen repairs within the horizon.
        """
        if self._ws[j] is None:
            self._ws[j] = build_ws_problem(self.net, self.scenarios[j], self.fleet, self.horizon,
                                           candidates=self.candidates)
        prob = self._ws[j]
        choice = dict(zip(self.x_keys, x))
        sol = solve_milp(fix_first_stage(prob, choice), gap_tol=self.recourse_gap, use_numba=self.use_numba)
        if not sol.feasible:
            return None, sol
        return -sol.objective, sol

    def evaluate(self, x) -> dict:
        """Objective of first stage ``x`` with the optimal recourse and VaR.

        For fixed ``x`` every scenario simply maximises its restoration (the
        objective is non-increasing in each one) and the best VaR is the lower
        ``alpha``-quantile of the losses.
        """
        x = tuple(int(round(v)) for v in x)
        if x in self._cache:
            return self._cache[x]
        rest, sols = [], []
        for j in range(self.num_scenarios):
            r, sol = self.recourse(j, x)
            if r is None:
                out = {"x": x, "objective": math.inf, "restoration": None, "solutions": None,
                       "infeasible_scenario": j}
                self._cache[x] = out
                return out
            rest.append(r)
            sols.append(sol)
        rest = np.array(rest)
        var, cv = cvar(rest, self.probs, self.risk.alpha)
        obj = float(-self.probs @ rest + self.risk.lam * cv)
        out = {"x": x, "objective": obj, "restoration": rest, "solutions": sols, "nu": var, "cvar": cv}
        self._cache[x] = out
        return out

    def assemble(self, evaluation: dict, extensive=None):
        """Extensive-form column vector for an evaluated first stage."""
        if extensive is None:
            extensive = build_extensive(self.net, self.scenarios, self.fleet, self.risk, self.horizon,
                                        candidates=self.candidates)
        ecat = extensive.catalog
        vals = np.zeros(extensive.num_vars)
        for key, v in zip(self.x_keys, evaluation["x"]):
            vals[ecat.x[key]] = v
        flow = forest_certificate(self.net)
        for (ln, t), col in ecat.eps.items():
            vals[col] = 1.0
            vals[ecat.f[(ln, t)]] = flow[ln]
        nu = float(np.clip(evaluation["nu"], -self.rmax, 0.0))
        vals[ecat.nu] = nu
        for s, sol in enumerate(evaluation["solutions"]):
            wcat = self._ws[s].catalog
            for attr in ("alpha", "Pgd", "Pgg", "Pg", "phi", "a", "mu", "beta", "P", "G", "o", "w", "z"):
                src, dst = getattr(wcat, attr), getattr(ecat, attr)
                for key, col in src.items():
                    vals[dst[key[:-1] + (s,)]] = sol.values[col]
            r = evaluation["restoration"][s]
            vals[ecat.Delta[s]] = max(0.0, -r - nu)
        return vals, extensive


# -- dual ascent --------------------------------------------------------------


def _agree(copies: list[ScenarioCopy], check_nu=True):
    xs = np.array([c.x for c in copies])
    nus = np.array([c.nu for c in copies])
    x_ok = bool(np.all(np.abs(xs - xs[0]) <= AGREE_TOL))
    if not check_nu:
        return x_ok, True
    scale = max(1.0, float(np.max(np.abs(nus))))
    nu_ok = bool(np.all(np.abs(nus - nus[0]) <= AGREE_TOL * scale))
    return x_ok, nu_ok


def solve_dual(node: DdNode, model: DecomposedModel, max_subgrad_iters: int = 30, subproblem_solver=solve_milp,
               *, cutoff=math.inf, target=math.inf, deadline=math.inf, clock=time.perf_counter,
               on_iter=None) -> DualResult:
    """Subgradient ascent on the Lagrangian of the node's copy-consistency rows.

    Each iteration solves every scenario block with ``subproblem_solver``
    and sums their best bounds, which is a valid lower bound for the node.
    The step length is ``theta * (target - L) / |g|^2`` towards ``target``
    (an incumbent value or a callable returning one), or ``theta`` along the
    normalised supergradient while no target is known. ``theta`` starts at
    ``multipliers.step`` and halves after ``STALL_ITERS`` iterations without
    improvement. Stops early when the copies agree, the bound reaches
    ``cutoff`` or the supergradient vanishes.
    """
    S = model.num_scenarios
    mult = node.multipliers.copy() if node.multipliers is not None else Multipliers.zeros(model.dim, S)
    mult.check(model.dim, S)
    bases = list(node.bases) if node.bases is not None else [None] * S
    best, best_mult, best_sols = -math.inf, mult.copy(), []
    stall = 0
    it = 0
    stopped = "iters"
    for it in range(1, max_subgrad_iters + 1):
        copies = []
        total = 0.0
        for j in range(S):
            left = deadline - clock()
            if left <= 0:
                stopped = "time"
                break
            prob = model.block(j, mult, node.fixings)
            sol = subproblem_solver(prob, gap_tol=model.sub_gap, time_limit=left, basis=bases[j],
                                    use_numba=model.use_numba)
            if not sol.feasible:
                if sol.status == INFEASIBLE_STATUS:
                    node.bases = bases
                    return DualResult(math.inf, mult, [], it, infeasible=True, stopped="infeasible")
                stopped = "time"
                break
            bases[j] = sol.root_basis
            cat = prob.catalog
            copies.append(ScenarioCopy(sol.values[cat.x_cols].round(), float(sol.values[cat.nu]), sol.values,
                                       sol.objective, sol.best_bound))
            total += sol.best_bound
        if stopped == "time":
            it -= 1
            break
        if total > best + 1e-12 * max(1.0, abs(total)):
            best, best_mult, best_sols = total, mult.copy(), copies
            stall = 0
        else:
            stall += 1
            if stall >= STALL_ITERS:
                mult.step *= 0.5
                stall = 0
        x_ok, nu_ok = _agree(copies, model.nu_rows_active)
        if on_iter is not None:
            on_iter(it, best, copies)
        if x_ok and nu_ok:
            best_sols = copies if total >= best - 1e-12 * max(1.0, abs(best)) else best_sols
            stopped = "agree"
            break
        if best >= (cutoff() if callable(cutoff) else cutoff):
            stopped = "cutoff"
            break
        rx, rnu = model.residuals([c.x for c in copies], [c.nu for c in copies])
        if not model.nu_rows_active:
            rnu = np.zeros_like(rnu)
        g = -np.concatenate([rx, rnu])
        norm = float(np.linalg.norm(g))
        if norm < GRAD_TOL:
            stopped = "grad"
            break
        if it == max_subgrad_iters:
            break
        tgt = target() if callable(target) else target
        if math.isfinite(tgt) and tgt > total:
            d = mult.step * (tgt - total) / norm ** 2 * g
        else:
            d = mult.step * g / norm
        mult = Multipliers(mult.lam1 + d[:model.dim], mult.lam2 + d[model.dim:], mult.step)
    node.bases = bases
    best_mult.step = mult.step
    if not best_sols:
        return DualResult(best, best_mult, [], it, stopped=stopped)
    return DualResult(best, best_mult, best_sols, it, stopped=stopped)


# -- rounding and branching ---------------------------------------------------


def average_copies(copies: list[ScenarioCopy], probs) -> np.ndarray:
    return np.asarray(probs, float) @ np.array([c.x for c in copies])


def round_first_stage(xbar, x_keys) -> tuple:
    """Threshold at 0.5 (ties up), then keep the largest chosen mode per line."""
    xbar = np.asarray(xbar, float)
    xr = (xbar >= 0.5).astype(int)
    by_line: dict = {}
    for k, (ln, _r) in enumerate(x_keys):
        by_line.setdefault(ln, []).append(k)
    for idx in by_line.values():
        on = [k for k in idx if xr[k]]
        if len(on) > 1:
            keep = max(on, key=lambda k: (xbar[k], -k))
            for k in on:
                xr[k] = int(k == keep)
    return tuple(int(v) for v in xr)


def rounding_sequence(xbar, x_keys):
    """Rounded ``xbar`` followed by ever smaller subsets of its chosen modes.

    Each step drops the chosen mode with the least support in ``xbar`` (ties
    to the highest index), ending at the empty choice, which leaves every
    line unrepaired and so always admits a recourse.
    """
    xbar = np.asarray(xbar, float)
    x = list(round_first_stage(xbar, x_keys))
    yield tuple(x)
    while any(x):
        k = min((k for k in range(len(x)) if x[k]), key=lambda k: (xbar[k], -k))
        x[k] = 0
        yield tuple(x)


def branch_component(copies: list[ScenarioCopy], probs, fixings: dict) -> int:
    """Free x component with the largest spread across copies, ties to the lowest index; -1 if none."""
    xs = np.array([c.x for c in copies])
    p = np.asarray(probs, float)
    mean = p @ xs
    var = p @ (xs - mean) ** 2
    free = [k for k in range(xs.shape[1]) if k not in fixings]
    if not free:
        return -1
    best = max(free, key=lambda k: (var[k], -k))
    return best


# -- tree search driver -------------------------------------------------------


@dataclass
class DdSolution(MilpSolution):
    x: tuple | None = None
    nu: float = math.nan
    restoration: np.ndarray | None = None
    trace: list = field(default_factory=list)
    extensive: object = None


def dd_branch_and_bound(net, scenarios, fleet, risk: RiskConfig, gap_tol: float = 1e-6, time_limit: float = math.inf,
                        *, horizon=None, max_subgrad_iters: int = 30, node_time_limit: float | None = None,
                        node_limit: int | None = None, sub_gap: float = 1e-6, split_copies: bool = True,
                        candidates=None, trace: bool = False, on_log=None, use_numba=None,
                        clock=time.perf_counter, assemble: bool = True, model: DecomposedModel | None = None
                        ) -> DdSolution:
    """Branch-and-bound over first-stage disagreements with Lagrangian node bounds.

    Nodes are taken best bound first and pruned lazily when popped. A node
    whose copies agree on ``x`` is closed by evaluating that ``x`` exactly;
    if the ``nu`` copies still disagree and the bound leaves room, the node is
    split on its lowest free ``x`` component. Otherwise the averaged ``x`` is
    rounded into a candidate incumbent (shedding weakly supported modes until
    every scenario has a recourse) and the most disputed component is fixed
    to 0 and to 1 in two children.
    """
    t0 = clock()
    deadline = t0 + time_limit
    if model is None:
        model = DecomposedModel(net, scenarios, fleet, risk, horizon, candidates=candidates,
                                split_copies=split_copies, sub_gap=sub_gap, use_numba=use_numba)
    probs = model.probs
    records: list[LogRecord] = []
    trace_rows: list[dict] = []
    seq = itertools.count()
    ids = itertools.count()
    state = {"inc": math.inf, "x": None, "nodes": 0, "last_bound": -math.inf, "slack": math.inf}

    def record(bound):
        inc = state["inc"]
        bound = max(bound, state["last_bound"])
        if math.isfinite(inc):
            bound = min(bound, inc)
        state["last_bound"] = bound
        rec = LogRecord(clock() - t0, state["nodes"], inc, bound, mip_gap(inc, bound), next(seq))
        records.append(rec)
        if on_log is not None:
            on_log(rec)

    def offer(x):
        ev = model.evaluate(x)
        if ev["objective"] < state["inc"] - 1e-12 * max(1.0, abs(ev["objective"])):
            state["inc"] = ev["objective"]
            state["x"] = ev["x"]
            return True
        return False

    def offer_rounded(xbar):
        # first feasible point of the rounding sequence; evaluations are cached
        for x in rounding_sequence(xbar, model.x_keys):
            if math.isfinite(model.evaluate(x)["objective"]):
                return offer(x)
        return False

    def prune_level():
        inc = state["inc"]
        if not math.isfinite(inc):
            return math.inf
        return inc - max(1e-9 * max(1.0, abs(inc)), gap_tol * abs(inc))

    def global_bound(open_nodes, current=math.inf):
        b = min([n.dual_bound for n in open_nodes] + [current, state["slack"]])
        return min(b, state["inc"])

    open_nodes: list[DdNode] = [DdNode(-math.inf, next(ids), {}, 0, None, Multipliers.zeros(model.dim,
                                                                                             model.num_scenarios))]
    status = OPTIMAL_STATUS
    while open_nodes:
        if clock() > deadline:
            status = TIME_LIMIT
            break
        if node_limit is not None and state["nodes"] >= node_limit:
            status = NODE_LIMIT
            break
        if math.isfinite(state["inc"]) and mip_gap(state["inc"], global_bound(open_nodes)) <= gap_tol:
            status = GAP_LIMIT
            break
        node = heapq.heappop(open_nodes)
        if node.dual_bound >= prune_level():
            continue
        state["nodes"] += 1
        is_root = node.parent is None

        def on_iter(it, best, copies, node=node):
            # the root bound is global, so report progress while it is being tightened
            if is_root:
                offer_rounded(average_copies(copies, probs))
                record(max(best, node.dual_bound))

        node_deadline = deadline if node_time_limit is None else min(deadline, clock() + node_time_limit)
        res = solve_dual(node, model, max_subgrad_iters, cutoff=prune_level, target=lambda: state["inc"],
                         deadline=node_deadline,
                         clock=clock, on_iter=on_iter)
        row = {"node": node.id, "parent": node.parent, "depth": node.depth,
               "fixings": {_x_label(model.x_keys[k]): v for k, v in sorted(node.fixings.items())},
               "z_ld": res.bound, "iterations": res.iterations, "stopped": res.stopped}
        if res.infeasible:
            row.update(action="infeasible")
            trace_rows.append(row)
            record(global_bound(open_nodes))
            continue
        bound = max(res.bound, node.dual_bound)
        node.dual_bound = bound
        node.multipliers = res.multipliers
        node.scenario_solutions = res.solutions
        if not res.solutions:
            # interrupted before a full pass; keep the node so the bound stays valid
            heapq.heappush(open_nodes, node)
            row.update(action="interrupted")
            trace_rows.append(row)
            status = TIME_LIMIT
            break
        x_ok, nu_ok = _agree(res.solutions, model.nu_rows_active)
        row.update(x_agree=x_ok, nu_agree=nu_ok)
        if bound >= prune_level():
            row.update(action="pruned")
        elif x_ok:
            x = res.solutions[0].x
            offer(x)
            ev = model.evaluate(x)
            free = [k for k in range(model.dim) if k not in node.fixings]
            if nu_ok or not free or bound >= prune_level():
                # copies agree: the block solutions form a solution of the node
                if bound < ev["objective"] - 1e-9 * max(1.0, abs(ev["objective"])) and not free:
                    pass  # all x fixed: the evaluation is the node optimum
                elif bound < ev["objective"] - 1e-9 * max(1.0, abs(ev["objective"])):
                    state["slack"] = min(state["slack"], bound)
                row.update(action="closed", value=ev["objective"])
            else:
                k = free[0]
                _push_children(open_nodes, node, k, ids)
                row.update(action="branch", component=_x_label(model.x_keys[k]))
        else:
            offer_rounded(average_copies(res.solutions, probs))
            k = branch_component(res.solutions, probs, node.fixings)
            if k < 0:
                # every component fixed, so the copies cannot differ
                offer(tuple(int(node.fixings[j]) for j in range(model.dim)))
                row.update(action="closed")
            else:
                _push_children(open_nodes, node, k, ids)
                row.update(action="branch", component=_x_label(model.x_keys[k]))
        trace_rows.append(row)
        record(global_bound(open_nodes))
        if trace:
            log.debug("dd node %s", json.dumps(row, default=float))

    bound = global_bound(open_nodes)
    if not open_nodes and status == OPTIMAL_STATUS:
        bound = min(state["slack"], state["inc"])
    record(bound)
    best_bound = state["last_bound"]
    elapsed = clock() - t0
    if state["x"] is None:
        if status == OPTIMAL_STATUS:
            status = INFEASIBLE_STATUS
        return DdSolution(None, math.inf, best_bound, math.inf, status, state["nodes"], elapsed, records,
                          trace=trace_rows if trace else [])
    ev = model.evaluate(state["x"])
    values, ext = (None, None)
    if assemble:
        values, ext = model.assemble(ev)
    return DdSolution(values, state["inc"], best_bound, mip_gap(state["inc"], best_bound), status, state["nodes"],
                      elapsed, records, x=state["x"], nu=ev["nu"], restoration=ev["restoration"],
                      trace=trace_rows if trace else [], extensive=ext)


def _push_children(open_nodes, node: DdNode, k: int, ids) -> None:
    for v in (0, 1):
        fix = dict(node.fixings)
        fix[k] = v
        child = DdNode(node.dual_bound, next(ids), fix, node.depth + 1, node.id,
                       node.multipliers.copy() if node.multipliers is not None else None,
                       bases=list(node.bases) if node.bases is not None else None)
        heapq.heappush(open_nodes, child)


def _x_label(key) -> str:
    (a, b), r = key
    return f"x[{a}-{b}][{r}]"


def write_trace(path, rows) -> None:
    with open(path, "w") as fh:
        json.dump({"schema": 1, "nodes": rows}, fh, indent=1, default=float)
