"""Solve the RP, WS and EV forms and turn solutions into schedules and profiles.

This is the glue the CLI and the metrics report share. Restoration values
are always reported in restoration units (weighted load-steps, larger is
better).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bnb import GAP_LIMIT, INFEASIBLE_STATUS, OPTIMAL_STATUS, TIME_LIMIT, LogRecord, MilpSolution, mip_gap, solve_milp
from .dualdecomp import DecomposedModel, dd_branch_and_bound
from .formulation import (
    RiskConfig,
    build_extensive,
    build_ws_problem,
    enumerate_first_stage,
    fix_first_stage,
    x_vector_to_choice,
)
from .metrics import RecoveryProfile, cvar, resilience
from .uncertainty import Scenario, expected_scenario

SOLVERS = ("extensive", "dd", "enumerate")
FORMS = ("rp", "ws", "ev")


@dataclass
class ScenarioOutcome:
    """One scenario's recourse: restoration, schedule and served loads."""

    restoration: float
    schedule: dict
    served: dict  # (node, t) -> 0/1
    x: dict  # first stage used by this scenario
    violated_rows: list = field(default_factory=list)


@dataclass
class SolveResult:
    form: str
    solver: str
    status: str
    objective: float
    best_bound: float
    gap: float
    wall_time: float
    node_count: int
    probabilities: np.ndarray
    outcomes: list[ScenarioOutcome]
    x: dict | None = None
    nu: float | None = None
    log: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    problem: object = None  # extensive problem the values refer to (rp only)
    values: np.ndarray | None = None

    @property
    def restoration(self) -> np.ndarray:
        return np.array([o.restoration for o in self.outcomes])

    @property
    def feasible(self) -> bool:
        return bool(self.outcomes)


# -- schedule extraction ------------------------------------------------------


def scenario_schedule(cat, values, s: int) -> tuple[dict, dict]:
    """Human-readable recourse of scenario ``s`` plus the served-load map."""
    v = np.asarray(values)

    def on(col):
        return v[col] > 0.5

    T = cat.horizon
    ders = sorted({k[0] for k in cat.alpha})
    der_pos = []
    for g in ders:
        for t in range(1, T + 1):
            node = next((i for i in cat.candidates if (g, i, t, s) in cat.alpha and on(cat.alpha[(g, i, t, s)])), None)
            if node is not None:
                der_pos.append({"der": g, "t": t, "node": node, "output": float(v[cat.Pgg[(g, t, s)]])})
    repairs = []
    for ln in cat.lines:
        mode = next((r for r in cat.modes[ln] if on(cat.x[(ln, r)])), None)
        start = next((t for t in range(1, T + 1) if on(cat.phi[(ln, t, s)])), None)
        active = [t for t in range(1, T + 1) if on(cat.a[(ln, t, s)])]
        done = next((t for t in range(1, T + 1) if on(cat.mu[(ln, t, s)])), None)
        repairs.append({"line": list(ln), "mode": mode, "start": start, "active": active, "repaired_from": done,
                        "resource": float(v[cat.w[(ln, s)]])})
    switches = {}
    for (ln, t, ss), col in cat.beta.items():
        if ss == s and on(col):
            switches.setdefault(t, []).append(list(ln))
    served = {(i, t): int(on(col)) for (i, t, ss), col in cat.o.items() if ss == s}
    restored = {t: sorted(i for (i, tt), val in served.items() if tt == t and val) for t in range(1, T + 1)}
    sched = {
        "der_positions": der_pos,
        "repairs": repairs,
        "switches_on": {str(t): sorted(v_) for t, v_ in sorted(switches.items())},
        "restored_nodes": {str(t): nodes for t, nodes in restored.items()},
    }
    return sched, served


def _outcome(cat, values, s, x=None, violated=()):
    sched, served = scenario_schedule(cat, values, s)
    if x is None:
        x = {k: int(round(values[c])) for k, c in cat.x.items()}
    return ScenarioOutcome(cat.restored(values, s), sched, served, x, list(violated))


def recovery_profile(net, horizon: int, result: SolveResult) -> RecoveryProfile:
    nodes = net.node_ids
    w = np.array([net.bus(i).priority for i in nodes])
    load = np.array([net.bus(i).load_profile(horizon) for i in nodes])
    wl = w[:, None] * load
    rows = []
    for o in result.outcomes:
        served = np.array([[o.served.get((i, t), 0) for t in range(1, horizon + 1)] for i in nodes])
        rows.append((wl * served).sum(axis=0))
    return RecoveryProfile(np.array(rows), wl.sum(axis=0), result.probabilities)


def phi_values(net, horizon: int, result: SolveResult) -> np.ndarray:
    return resilience(recovery_profile(net, horizon, result))


# -- forms --------------------------------------------------------------------


def solve_rp(net, scenarios, fleet, risk: RiskConfig, *, horizon=None, solver="extensive", gap_tol=1e-6,
             time_limit=math.inf, candidates=None, trace=False, use_numba=None, **kw) -> SolveResult:
    """Recourse problem (deterministic equivalent over all scenarios)."""
    horizon = scenarios.horizon if horizon is None else horizon
    probs = np.array([sc.probability for sc in scenarios])
    if solver == "extensive":
        prob = build_extensive(net, scenarios, fleet, risk, horizon, candidates=candidates)
        sol = solve_milp(prob, gap_tol=gap_tol, time_limit=time_limit, use_numba=use_numba, **kw)
        tr = []
    elif solver == "enumerate":
        sol, prob = solve_enumerated(net, scenarios, fleet, risk, horizon=horizon, candidates=candidates,
                                     time_limit=time_limit, use_numba=use_numba, model=kw.get("model"))
        tr = []
    elif solver == "dd":
        sol = dd_branch_and_bound(net, scenarios, fleet, risk, gap_tol, time_limit, horizon=horizon,
                                  candidates=candidates, trace=trace, use_numba=use_numba, **kw)
        prob = sol.extensive
        tr = sol.trace
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return _wrap_extensive("rp", solver, sol, prob, probs, tr)


def solve_enumerated(net, scenarios, fleet, risk: RiskConfig, *, horizon=None, candidates=None,
                     time_limit=math.inf, use_numba=None, model: DecomposedModel | None = None, clock=time.perf_counter):
    """Recourse problem by trying every first stage with exact per-scenario recourse.

    Exact whenever the loop completes. Fixed-``x`` evaluations are cached
    on ``model``, so passing the same model for several ``lambda`` values
    reuses the recourse solves (only the risk weights change).
    Returns ``(MilpSolution, extensive problem)``.
    """
    start = clock()
    if model is None:
        model = DecomposedModel(net, scenarios, fleet, risk, horizon, candidates=candidates, use_numba=use_numba)
    elif model.risk != risk:
        model = _rescored(model, risk)
    cat = model.blocks[0].catalog
    best, log, count = None, [], 0
    status = OPTIMAL_STATUS
    for choice in enumerate_first_stage(cat.lines, cat.modes):
        if clock() - start > time_limit:
            status = TIME_LIMIT
            break
        ev = model.evaluate(tuple(choice[k] for k in model.x_keys))
        count += 1
        if best is None or ev["objective"] < best["objective"] - 1e-12:
            best = ev
            if math.isfinite(ev["objective"]):
                log.append(LogRecord(clock() - start, count, ev["objective"], -math.inf, math.inf, len(log)))
    wall = clock() - start
    if best is None or not math.isfinite(best["objective"]):
        return MilpSolution(None, math.inf, math.inf, math.inf,
                            INFEASIBLE_STATUS if status == OPTIMAL_STATUS else status, count, wall), None
    obj = best["objective"]
    bound = obj if status == OPTIMAL_STATUS else -math.inf
    log.append(LogRecord(wall, count, obj, bound, mip_gap(obj, bound), len(log)))
    values, prob = model.assemble(best)
    return MilpSolution(values, obj, bound, mip_gap(obj, bound), status, count, wall, log, bound), prob


def _rescored(model: DecomposedModel, risk: RiskConfig) -> DecomposedModel:
    # same recourse solves, new risk weights: rebuild the cache entries' objectives
    import copy

    out = copy.copy(model)
    out.risk = risk
    out.nu_rows_active = risk.lam > 0
    out._cache = {}
    for x, ev in model._cache.items():
        if ev["restoration"] is None:
            out._cache[x] = ev
            continue
        var, cv = cvar(ev["restoration"], model.probs, risk.alpha)
        out._cache[x] = dict(ev, objective=float(-model.probs @ ev["restoration"] + risk.lam * cv), nu=var, cvar=cv)
    return out


def _wrap_extensive(form, solver, sol: MilpSolution, prob, probs, tr=()):
    if not sol.feasible:
        return SolveResult(form, solver, sol.status, sol.objective, sol.best_bound, sol.mip_gap, sol.wall_time,
                           sol.node_count, probs, [], log=sol.log, trace=list(tr))
    cat = prob.catalog
    x = x_vector_to_choice(cat, sol.values[cat.x_cols])
    outcomes = [_outcome(cat, sol.values, s, x) for s in range(len(probs))]
    nu = float(sol.values[cat.nu]) if cat.nu is not None else None
    return SolveResult(form, solver, sol.status, sol.objective, sol.best_bound, sol.mip_gap, sol.wall_time,
                       sol.node_count, probs, outcomes, x=x, nu=nu, log=sol.log, trace=list(tr), problem=prob,
                       values=sol.values)


def solve_ws(net, scenarios, fleet, *, horizon=None, gap_tol=1e-6, time_limit=math.inf, candidates=None,
             use_numba=None, **kw) -> SolveResult:
    """Wait-and-see: every scenario solved with its own repair modes."""
    horizon = scenarios.horizon if horizon is None else horizon
    probs = np.array([sc.probability for sc in scenarios])
    outcomes, log = [], []
    status, nodes, wall = OPTIMAL_STATUS, 0, 0.0
    bound = 0.0
    obj = 0.0
    for s, sc in enumerate(scenarios):
        prob = build_ws_problem(net, sc, fleet, horizon, candidates=candidates)
        sol = solve_milp(prob, gap_tol=gap_tol, time_limit=time_limit, use_numba=use_numba, **kw)
        nodes += sol.node_count
        wall += sol.wall_time
        if not sol.feasible:
            return SolveResult("ws", "extensive", sol.status, math.inf, math.inf, math.inf, wall, nodes, probs, [])
        if sol.status not in (OPTIMAL_STATUS, GAP_LIMIT):
            status = sol.status
        outcomes.append(_outcome(prob.catalog, sol.values, 0))
        obj += probs[s] * sol.objective
        bound += probs[s] * sol.best_bound
        log.extend(sol.log)
    return SolveResult("ws", "extensive", status, obj, bound, mip_gap(obj, bound), wall, nodes, probs, outcomes,
                       log=log)


def evaluate_first_stage(net, scenarios, fleet, x_choice: dict, *, horizon=None, candidates=None, gap_tol=1e-9,
                         allow_relaxed=True, use_numba=None) -> list[ScenarioOutcome]:
    """Optimal recourse of every scenario under fixed repair modes.

    When a scenario cannot complete a chosen repair within the horizon and
    ``allow_relaxed`` is set, the chosen modes become upper bounds for that
    scenario and the rows the strict plan would violate are recorded.
    """
    horizon = scenarios.horizon if horizon is None else horizon
    out = []
    for sc in scenarios:
        prob = build_ws_problem(net, sc, fleet, horizon, candidates=candidates)
        strict = fix_first_stage(prob, x_choice)
        sol = solve_milp(strict, gap_tol=gap_tol, use_numba=use_numba)
        violated = []
        if not sol.feasible:
            if not allow_relaxed:
                raise ValueError(f"scenario {sc.id}: first stage has no feasible recourse")
            relaxed = fix_first_stage(prob, x_choice, relax_to_subset=True)
            sol = solve_milp(relaxed, gap_tol=gap_tol, use_numba=use_numba)
            if not sol.feasible:  # pragma: no cover - doing nothing is always feasible
                raise ValueError(f"scenario {sc.id}: no recourse even with relaxed modes")
            pinned = sol.values.copy()
            for key, col in prob.catalog.x.items():
                pinned[col] = x_choice.get(key, 0)
            violated = strict.violated_rows(pinned)
        out.append(_outcome(prob.catalog, sol.values, 0, None, violated))
    return out


def solve_ev(net, scenarios, fleet, table, risk: RiskConfig | None = None, *, horizon=None, budget=None,
             gap_tol=1e-6, time_limit=math.inf, candidates=None, use_numba=None, **kw) -> SolveResult:
    """Expected-value solution: repair modes from the mean scenario, recourse per scenario."""
    horizon = scenarios.horizon if horizon is None else horizon
    if budget is None:
        budget = scenarios[0].budget
    mean_sc = expected_scenario(table, horizon, budget)
    return _solve_mean(net, scenarios, fleet, mean_sc, risk, horizon, gap_tol, time_limit, candidates, use_numba, **kw)


def empirical_mean_scenario(scenarios, horizon=None) -> Scenario:
    """Probability-weighted mean of a scenario set, repair times rounded up."""
    horizon = scenarios.horizon if horizon is None else horizon
    p = scenarios.probabilities
    trepair, rs = {}, {}
    for key in scenarios.keys:
        tr = float(sum(pj * sc.trepair[key] for pj, sc in zip(p, scenarios)))
        trepair[key] = int(min(max(math.ceil(tr - 1e-9), 1), horizon))
        rs[key] = float(sum(pj * sc.rs[key] for pj, sc in zip(p, scenarios)))
    return Scenario(0, 1.0, trepair, rs, scenarios[0].budget)


def solve_ev_empirical(net, scenarios, fleet, risk: RiskConfig | None = None, *, horizon=None, gap_tol=1e-6,
                       time_limit=math.inf, candidates=None, use_numba=None, **kw) -> SolveResult:
    """EV form when no repair-mode table is at hand: the mean of the scenarios stands in."""
    horizon = scenarios.horizon if horizon is None else horizon
    mean_sc = empirical_mean_scenario(scenarios, horizon)
    return _solve_mean(net, scenarios, fleet, mean_sc, risk, horizon, gap_tol, time_limit, candidates, use_numba, **kw)


def _solve_mean(net, scenarios, fleet, mean_sc, risk, horizon, gap_tol, time_limit, candidates, use_numba, **kw):
    prob = build_ws_problem(net, mean_sc, fleet, horizon, candidates=candidates)
    sol = solve_milp(prob, gap_tol=gap_tol, time_limit=time_limit, use_numba=use_numba, **kw)
    probs = np.array([sc.probability for sc in scenarios])
    if not sol.feasible:
        return SolveResult("ev", "extensive", sol.status, math.inf, math.inf, math.inf, sol.wall_time,
                           sol.node_count, probs, [], log=sol.log)
    cat = prob.catalog
    x = x_vector_to_choice(cat, sol.values[cat.x_cols])
    outcomes = evaluate_first_stage(net, scenarios, fleet, x, horizon=horizon, candidates=candidates,
                                    use_numba=use_numba)
    r = np.array([o.restoration for o in outcomes])
    lam, alpha = (risk.lam, risk.alpha) if risk is not None else (0.0, 0.8)
    var, cv = cvar(r, probs, alpha)
    obj = float(-probs @ r + lam * cv)
    return SolveResult("ev", "extensive", sol.status, obj, obj, 0.0, sol.wall_time, sol.node_count, probs,
                       outcomes, x=x, nu=var if lam else None, log=sol.log)


def solve_form(form, net, scenarios, fleet, risk, *, table=None, solver="extensive", **kw) -> SolveResult:
    if form == "rp":
        return solve_rp(net, scenarios, fleet, risk, solver=solver, **kw)
    kw.pop("trace", None)
    if form == "ws":
        return solve_ws(net, scenarios, fleet, **kw)
    if form == "ev":
        if table is not None:
            return solve_ev(net, scenarios, fleet, table, risk, **kw)
        return solve_ev_empirical(net, scenarios, fleet, risk, **kw)
    raise ValueError(f"unknown form {form!r}")


def first_stage_model(net, scenarios, fleet, risk, horizon=None, **kw) -> DecomposedModel:
    """Fixed-``x`` evaluator over a scenario set (exact recourse per scenario)."""
    return DecomposedModel(net, scenarios, fleet, risk, horizon, **kw)


# -- solution files -----------------------------------------------------------

SCHEMA = 1


def _line_key(k):
    return [list(k[0]), k[1]]


def solution_to_dict(result: SolveResult, net, horizon: int, inputs: dict | None = None) -> dict:
    """JSON-ready record of a solve.

    ``inputs`` (network, fleet and scenario dicts plus the risk setting) is
    embedded verbatim so the file can be re-checked on its own.
    """
    nominal = _nominal_area(net, horizon)
    scen = []
    for s, o in enumerate(result.outcomes):
        scen.append({
            "index": s,
            "probability": float(result.probabilities[s]),
            "restoration": float(o.restoration),
            "phi": float(o.restoration / nominal) if nominal > 0 else None,
            "x": [_line_key(k) + [int(v)] for k, v in sorted(o.x.items())],
            "schedule": o.schedule,
            "violated_rows": o.violated_rows,
        })
    out = {
        "schema": SCHEMA,
        "form": result.form,
        "solver": result.solver,
        "status": result.status,
        "objective": _num(result.objective),
        "best_bound": _num(result.best_bound),
        "gap": _num(result.gap),
        "wall_time": result.wall_time,
        "node_count": result.node_count,
        "x": None if result.x is None else [_line_key(k) + [int(v)] for k, v in sorted(result.x.items())],
        "nu": result.nu,
        "scenarios": scen,
        "inputs": inputs or {},
    }
    if result.values is not None and result.problem is not None:
        names = result.problem.names
        out["columns"] = {names[j]: float(v) for j, v in enumerate(result.values) if v != 0.0}
    return out


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _nominal_area(net, horizon) -> float:
    return float(sum(net.bus(i).priority * net.bus(i).load_profile(horizon).sum() for i in net.node_ids))


def check_solution(data: dict, tol: float = 1e-6) -> float:
    """Rebuild the extensive form from the embedded inputs and return the worst row violation.

    Only recourse-problem records carry the full column vector; other forms
    raise ``ValueError``.
    """
    from .formulation import FleetSpec
    from .netgraph import network_from_dict
    from .uncertainty import ScenarioSet

    if "columns" not in data:
        raise ValueError("solution record holds no extensive-form columns")
    inp = data["inputs"]
    net = network_from_dict(inp["network"])
    fleet = FleetSpec.from_dict(inp["fleet"])
    scenarios = ScenarioSet.from_dict(inp["scenarios"])
    risk = RiskConfig(inp["lambda"], inp["alpha"])
    prob = build_extensive(net, scenarios, fleet, risk, inp["horizon"], candidates=inp.get("candidates"))
    vals = np.zeros(prob.num_vars)
    for name, v in data["columns"].items():
        vals[prob.index(name)] = v
    return prob.violation(vals, int_tol=tol)
