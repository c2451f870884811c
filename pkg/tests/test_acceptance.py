"""Acceptance criteria, one test each, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in
the "acceptance criteria" section of the terminal summary.
"""

import itertools
import math
import time

import mpmath
import numpy as np
import pytest

from riskrestore.dualdecomp import DdNode, DecomposedModel, Multipliers, solve_dual
from riskrestore.formulation import RiskConfig
from riskrestore.metrics import cvar, mean_risk_report, mean_risk_value
from riskrestore.netgraph import connected_components, load_network, preassign_ders
from riskrestore.pipeline import _nominal_area, first_stage_model, solve_ev, solve_rp, solve_ws
from riskrestore.uncertainty import mttr, sample_scenarios

from checks import linearization_residual, monotonicity_failures, radiality_failures
from conftest import ACCEPTANCE_LINES, fixture_path

DONE = ("Optimal", "GapLimit")
# published WS >= RP >= EV restoration values used only for their order
REFERENCE_CHAIN = (15557, 14927, 13334)


def _report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- shared solves ------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_solutions(toy):
    """Extensive, DD and enumeration solves of the toy at lam 0 and lam 1, timed."""
    out = {}
    t0 = time.perf_counter()
    for lam in (0.0, 1.0):
        risk = RiskConfig(lam, 0.8)
        for solver in ("extensive", "dd", "enumerate"):
            out[(lam, solver)] = solve_rp(toy["net"], toy["scenarios"], toy["fleet"], risk, solver=solver)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def medium_rp(medium):
    """Exact risk-neutral and risk-averse recourse solves of the 20-scenario medium set."""
    net, sc, fleet = medium["net"], medium["scenarios"], medium["fleet"]
    t0 = time.perf_counter()
    model = first_stage_model(net, sc, fleet, RiskConfig(0.0, 0.8))
    rp0 = solve_rp(net, sc, fleet, RiskConfig(0.0, 0.8), solver="enumerate", model=model)
    rp1 = solve_rp(net, sc, fleet, RiskConfig(1.0, 0.8), solver="enumerate", model=model)
    return rp0, rp1, time.perf_counter() - t0


def _all_solutions(toy, toy_solutions, medium, medium_rp):
    sols, _ = toy_solutions
    for key, res in sols.items():
        yield f"toy {key[1]} lam={key[0]:g}", toy["net"], toy["scenarios"], res
    rp0, rp1, _ = medium_rp
    yield "medium lam=0", medium["net"], medium["scenarios"], rp0
    yield "medium lam=1", medium["net"], medium["scenarios"], rp1


# -- criteria -----------------------------------------------------------------


def test_criterion_01_oracle_equivalence(toy_solutions):
    sols, wall = toy_solutions
    spreads, statuses = [], []
    for lam in (0.0, 1.0):
        objs = [sols[(lam, s)].objective for s in ("extensive", "dd", "enumerate")]
        statuses += [sols[(lam, s)].status for s in ("extensive", "dd", "enumerate")]
        spreads.append(max(objs) - min(objs))
    ok = max(spreads) <= 1e-6 and wall < 60 and all(s in DONE for s in statuses)
    _report(1, ok, f"max objective spread {max(spreads):.2e} (<= 1e-6), runtime {wall:.1f}s (< 60s)")


def test_criterion_02_weak_duality(toy):
    rng = np.random.default_rng(2)
    nodes = violations = 0
    worst = -math.inf
    for lam in (0.0, 1.0):
        model = DecomposedModel(toy["net"], toy["scenarios"], toy["fleet"], RiskConfig(lam, 0.8), 4)
        firsts = {}
        for x in itertools.product((0, 1), repeat=model.dim):
            ev = model.evaluate(x)["objective"]
            firsts[x] = ev
        for pattern in itertools.product((None, 0, 1), repeat=model.dim):
            fix = {k: v for k, v in enumerate(pattern) if v is not None}
            mult = Multipliers(rng.normal(scale=5.0, size=model.dim), rng.normal(scale=5.0, size=model.num_scenarios - 1))
            res = solve_dual(DdNode(-math.inf, 0, fix, multipliers=mult), model, max_subgrad_iters=2)
            opt = min([v for x, v in firsts.items() if all(x[k] == b for k, b in fix.items())], default=math.inf)
            nodes += 1
            if math.isfinite(opt):
                worst = max(worst, res.bound - opt)
            if res.bound > opt + 1e-6 * max(1.0, abs(opt)):
                violations += 1
    _report(2, nodes >= 100 and violations == 0,
            f"{nodes} nodes, {violations} violations, worst Z_LD - node optimum {worst:.3g}")


def test_criterion_03_linearization(toy, toy_solutions, medium, medium_rp):
    worst_prod, worst_budget = 0.0, -math.inf
    n = 0
    for _, _, sc, res in _all_solutions(toy, toy_solutions, medium, medium_rp):
        p, b = linearization_residual(res.problem, res.values, sc)
        worst_prod, worst_budget = max(worst_prod, p), max(worst_budget, b)
        n += 1
    _report(3, worst_prod <= 1e-7 and worst_budget <= 1e-7,
            f"{n} solutions, worst |z - a*w| {worst_prod:.2e}, worst budget excess {worst_budget:.2e}")


def test_criterion_04_radiality(toy, toy_solutions, medium, medium_rp):
    fails = []
    n = 0
    for name, net, _, res in _all_solutions(toy, toy_solutions, medium, medium_rp):
        fails += [(name,) + f for f in radiality_failures(net, res.problem, res.values)]
        n += 1
    _report(4, not fails, f"{n} solutions, {len(fails)} radiality failures {fails[:3]}")


def test_criterion_05_monotonicity(toy, toy_solutions, medium, medium_rp):
    fails = []
    n = 0
    for name, _, _, res in _all_solutions(toy, toy_solutions, medium, medium_rp):
        fails += [(name,) + f for f in monotonicity_failures(res.problem, res.values)]
        n += 1
    _report(5, not fails, f"{n} solutions, {len(fails)} o/mu decreases {fails[:3]}")


def test_criterion_06_metric_chain(toy, medium, medium_rp):
    tol = 1e-6
    rep = mean_risk_report(toy["net"], toy["scenarios"], toy["fleet"], RiskConfig(1.0, 0.8), table=toy["table"])
    toy_ok = rep.ws >= rep.rp - tol and rep.rp >= rep.ev - tol and rep.mrvpi >= -tol and rep.mrvss >= -tol
    net, sc, fleet = medium["net"], medium["scenarios"], medium["fleet"]
    rp0, rp1, _ = medium_rp
    ws = solve_ws(net, sc, fleet)
    ev = solve_ev(net, sc, fleet, medium["table"], RiskConfig(1.0, 0.8))
    p = sc.probabilities
    w, r, e = (float(p @ x.restoration) for x in (ws, rp0, ev))
    mrws, mrrp, mrev = (mean_risk_value(x.restoration, p, 1.0, 0.8) for x in (ws, rp1, ev))
    med_ok = (w >= r - tol and r >= e - tol and mrws - mrrp >= -tol and mrrp - mrev >= -tol
              and all(x.status in DONE for x in (ws, rp0, rp1, ev)))
    ref_ok = REFERENCE_CHAIN[0] >= REFERENCE_CHAIN[1] >= REFERENCE_CHAIN[2]
    _report(6, toy_ok and med_ok and ref_ok,
            f"toy WS {rep.ws:.3f} >= RP {rep.rp:.3f} >= EV {rep.ev:.3f}, MRVPI {rep.mrvpi:.3f}, "
            f"MRVSS {rep.mrvss:.3f}; medium WS {w:.3f} >= RP {r:.3f} >= EV {e:.3f}, MRVPI {mrws - mrrp:.3f}, "
            f"MRVSS {mrrp - mrev:.3f}; reference order {REFERENCE_CHAIN}")


def test_criterion_07_risk_tradeoff(medium, medium_rp):
    rp0, rp1, wall = medium_rp
    sc = medium["scenarios"]
    area = _nominal_area(medium["net"], sc.horizon)
    p = sc.probabilities
    phi0, phi1 = rp0.restoration / area, rp1.restoration / area
    m0, m1 = float(p @ phi0), float(p @ phi1)
    v0, v1 = float(p @ (phi0 - m0) ** 2), float(p @ (phi1 - m1) ** 2)
    ratio = v1 / v0 if v0 > 0 else (0.0 if v1 == 0 else math.inf)
    drop = (m0 - m1) / m0
    ok = len(sc) >= 20 and ratio <= 0.5 and drop <= 0.05 and wall <= 900 and rp0.status in DONE and rp1.status in DONE
    _report(7, ok, f"{len(sc)} scenarios, var ratio {ratio:.3f} (<= 0.5), mean drop {100 * drop:.2f}% (<= 5%), "
                   f"runtime {wall:.0f}s (<= 900s)")


C8_BUDGET = 60.0


def _gap_at(log, t):
    gaps = [r.gap for r in log if r.elapsed <= t]
    return min(gaps) if gaps else math.inf


def test_criterion_08_dd_convergence(medium):
    net, fleet, table = medium["net"], medium["fleet"], medium["table"]
    risk = RiskConfig(1.0, 0.8)
    wins = 0
    notes = []
    for seed in range(5):
        sc = sample_scenarios(table, 10, 5, 16.0, seed)
        ext = solve_rp(net, sc, fleet, risk, solver="extensive", gap_tol=0.10, time_limit=C8_BUDGET)
        hit = [r for r in ext.log if r.gap <= 0.10]
        if hit:
            t_star, ref = hit[0].elapsed, hit[0].gap
            dd = solve_rp(net, sc, fleet, risk, solver="dd", time_limit=t_star)
            dd_gap = _gap_at(dd.log, t_star)
            win = dd_gap <= ref
            notes.append(f"s{seed}: t*={t_star:.0f}s ext {ref:.3f} dd {dd_gap:.3f}")
        else:
            # the baseline never reaches 10% inside the budget: the crossing lies
            # beyond it, where the DD gap can only be smaller than at the budget
            dd = solve_rp(net, sc, fleet, risk, solver="dd", time_limit=C8_BUDGET)
            dd_gap = _gap_at(dd.log, C8_BUDGET)
            win = dd_gap <= 0.10
            notes.append(f"s{seed}: ext >10% at {C8_BUDGET:.0f}s (gap {ext.gap:.3g}), dd {dd_gap:.3f}")
        wins += win
    _report(8, wins >= 4, f"DD ahead in {wins}/5 trials (>= 4); " + "; ".join(notes))


def test_criterion_09_mttr():
    ref = float(mpmath.gamma(1 + mpmath.mpf(1) / 2))
    got = mttr(1, 2)
    ok = mttr(3, 1) == 3.0 and abs(got - ref) <= 1e-5 and abs(got - 0.886227) <= 1e-5
    _report(9, ok, f"mttr(3,1)={mttr(3, 1)!r}, mttr(1,2)={got:.7f} vs gamma {ref:.7f}")


def test_criterion_10_preassignment():
    net = load_network(fixture_path("toy_network.json"))
    damaged = [e.key for e in net.damaged]
    comps = connected_components(net, damaged)
    cands = preassign_ders(net, damaged)
    ok = comps == [{1, 2, 3}, {4}, {5, 6}] and cands == {4, 5}
    _report(10, ok, f"components {comps}, candidates {sorted(cands)}")


def test_criterion_11_cvar():
    nu_d, cv_d = cvar([-2.5] * 4, [0.1, 0.2, 0.3, 0.4], 0.9)
    losses = np.array([1.0, 2.0, 3.0, 4.0])
    nu, cv = cvar(-losses, [0.25] * 4, 0.75)
    # brute force: worst 25% of equally likely losses is the single value 4
    tail = np.sort(losses)[-1:]
    ok = nu_d == cv_d and nu == 3.0 and cv == pytest.approx(float(tail.mean()), abs=1e-12)
    _report(11, ok, f"degenerate nu {nu_d} = CVaR {cv_d}; quartile nu {nu}, CVaR {cv} vs tail {tail.mean()}")
