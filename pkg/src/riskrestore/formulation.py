"""Restoration MILP builders: extensive form, WS/EV variants and scenario subproblems.

All problems are minimisation problems. Restoration (weighted restored load
summed over time) enters with negative coefficients, so "restored units" is
always ``-objective`` for the risk-neutral variants.

Column names follow ``symbol[index]...``, with lines written ``src-dst``,
time steps ``t`` 1-based and scenarios ``s`` 0-based (position in the set).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netgraph import NetworkModel, preassign_ders
from .problem import BINARY, CONTINUOUS, EQ, GE, LE, MilpProblem, ModelBuilder
from .uncertainty import RepairModeTable, Scenario, ScenarioSet, expected_scenario

log = logging.getLogger(__name__)


class FormulationError(ValueError):
    pass


# -- inputs -----------------------------------------------------------------


@dataclass(frozen=True)
class DerUnit:
    id: int
    capacity: float
    travel: dict = field(default_factory=dict)  # frozenset({i, j}) -> steps
    default_travel: int | None = None

    def travel_time(self, i: int, j: int) -> int:
        key = frozenset((i, j))
        if key in self.travel:
            return self.travel[key]
        if self.default_travel is None:
            raise FormulationError(f"DER {self.id}: no travel time between {i} and {j}")
        return self.default_travel


@dataclass
class FleetSpec:
    ders: list[DerUnit]

    def validate(self, candidates) -> None:
        cand = sorted(candidates)
        seen = set()
        for g in self.ders:
            if g.id in seen:
                raise FormulationError(f"duplicate DER id {g.id}")
            seen.add(g.id)
            if g.capacity <= 0:
                raise FormulationError(f"DER {g.id}: capacity must be positive")
            for k, i in enumerate(cand):
                for j in cand[k + 1:]:
                    if g.travel_time(i, j) < 1:
                        raise FormulationError(f"DER {g.id}: travel {i}-{j} must be at least one step")

    @classmethod
    def from_dict(cls, data: dict) -> "FleetSpec":
        ders = []
        default = data.get("default_travel")
        for rec in data.get("ders", []):
            travel = {}
            for i, j, steps in rec.get("travel", []):
                key = frozenset((int(i), int(j)))
                if key in travel and travel[key] != int(steps):
                    raise FormulationError(f"DER {rec['id']}: asymmetric travel {i}-{j}")
                travel[key] = int(steps)
            ders.append(DerUnit(int(rec["id"]), float(rec["capacity"]), travel,
                                rec.get("default_travel", default)))
        return cls(ders)

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "ders": [
                {
                    "id": g.id,
                    "capacity": g.capacity,
                    "travel": [[*sorted(k), v] for k, v in sorted(g.travel.items(), key=lambda kv: sorted(kv[0]))],
                    "default_travel": g.default_travel,
                }
                for g in self.ders
            ],
        }


def load_fleet(path) -> FleetSpec:
    return FleetSpec.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RiskConfig:
    lam: float = 0.0
    alpha: float = 0.8

    def __post_init__(self):
        if not self.lam >= 0:
            raise FormulationError("lambda must be non-negative")
        if not 0 < self.alpha < 1:
            raise FormulationError("alpha must lie in (0, 1)")


# -- column catalogue -------------------------------------------------------

# symbol -> (catalogue attribute, index layout)
SYMBOLS = {
    "x_ij^r": ("x", "(line, r)"),
    "nu": ("nu", "scalar"),
    "alpha_{i,t,s}^g": ("alpha", "(g, i, t, s)"),
    "Pg_{t,s}^g": ("Pgg", "(g, t, s)"),
    "Pg_{i,t,s}": ("Pg", "(i, t, s)"),
    "phi_{ij,t,s}": ("phi", "(line, t, s)"),
    "a_{ij,t,s}": ("a", "(line, t, s)"),
    "mu_{ij,t,s}": ("mu", "(line, t, s)"),
    "beta_{ij,t,s}": ("beta", "(line, t, s)"),
    "eps_{ij,t}": ("eps", "(line, t)"),
    "f_{ij,t}": ("f", "(line, t)"),
    "P_{ij,t,s}": ("P", "(line, t, s)"),
    "G_{i,t,s}": ("G", "(i, t, s)"),
    "o_{i,t,s}": ("o", "(i, t, s)"),
    "Delta_s": ("Delta", "s"),
    "w_{ij,s}": ("w", "(line, s)"),
    "z_{ij,t,s}": ("z", "(line, t, s)"),
}

# parameters that live on input objects rather than columns
PARAMETERS = {
    "p_{i,t}": "Bus.load",
    "w_i": "Bus.priority",
    "Pg_bar_g": "DerUnit.capacity",
    "tr_ij^g": "DerUnit.travel",
    "flow_bar_ij": "Line.max_flow",
    "G_bar_{i,t}": "Bus.max_gen",
    "RS_bar_{t,s}": "Scenario.budget",
    "trepair_{ij,r,s}": "Scenario.trepair",
    "rs_{ij,r,s}": "Scenario.rs",
    "lambda": "RiskConfig.lam",
    "alpha": "RiskConfig.alpha",
    "T": "horizon",
    "N": "NetworkModel.nodes",
    "L": "NetworkModel.edges",
    "G": "FleetSpec.ders",
    "S": "ScenarioSet.scenarios",
}


class VariableCatalog:
    """Column indices of every model symbol, keyed by structured tuples."""

    def __init__(self):
        self.x: dict = {}
        self.nu: int | None = None
        self.alpha: dict = {}
        self.Pgd: dict = {}  # DER g's output delivered at node i
        self.Pgg: dict = {}
        self.Pg: dict = {}
        self.phi: dict = {}
        self.a: dict = {}
        self.mu: dict = {}
        self.beta: dict = {}
        self.eps: dict = {}
        self.f: dict = {}
        self.P: dict = {}
        self.G: dict = {}
        self.o: dict = {}
        self.Delta: dict = {}
        self.w: dict = {}
        self.z: dict = {}
        self.restoration: dict = {}  # s -> (cols, coefs)
        self.lines: list = []
        self.modes: dict = {}
        self.nodes: list = []
        self.candidates: list = []
        self.horizon = 0
        self.num_scenarios = 0
        self.rmax = 0.0
        self.w_bar: dict = {}
        self.budget: dict = {}

    @property
    def x_keys(self) -> list:
        return list(self.x)

    @property
    def x_cols(self) -> np.ndarray:
        return np.fromiter(self.x.values(), int, len(self.x))

    @property
    def first_stage(self) -> list[int]:
        cols = list(self.x.values())
        if self.nu is not None:
            cols.append(self.nu)
        return cols

    def restored(self, values, s: int) -> float:
        cols, coefs = self.restoration[s]
        return float(np.dot(np.asarray(values)[cols], coefs))

    def counts(self) -> dict:
        out = {}
        for attr in ("x", "alpha", "Pgd", "Pgg", "Pg", "phi", "a", "mu", "beta", "eps", "f", "P", "G", "o",
                     "Delta", "w", "z"):
            out[attr] = len(getattr(self, attr))
        out["nu"] = int(self.nu is not None)
        return out


def line_label(line) -> str:
    return f"{line[0]}-{line[1]}"


# -- assembly ---------------------------------------------------------------


class _Context:
    def __init__(self, net: NetworkModel, scenarios, fleet: FleetSpec, horizon: int, candidates=None):
        if horizon < 1:
            raise FormulationError("horizon must be at least one step")
        self.net = net
        self.T = int(horizon)
        self.fleet = fleet
        self.nodes = net.node_ids
        self.edges = list(net.edges)
        self.damaged = sorted(e.key for e in net.damaged)
        if not self.damaged:
            raise FormulationError("no damaged lines")
        if candidates is None:
            candidates = net.candidates or sorted(preassign_ders(net, self.damaged))
        self.candidates = sorted(candidates)
        fleet.validate(self.candidates)
        self.roots = sorted(net.substation_ids)
        keys = set(scenarios[0].trepair)
        for sc in scenarios:
            if set(sc.trepair) != keys:
                raise FormulationError(f"scenario {sc.id}: inconsistent (line, mode) key set")
        lines = sorted({k[0] for k in keys})
        if lines != self.damaged:
            raise FormulationError(f"scenario lines {lines} do not match damaged lines {self.damaged}")
        self.modes = {ln: sorted(r for (l2, r) in keys if l2 == ln) for ln in lines}
        self.load = {i: net.bus(i).load_profile(self.T) for i in self.nodes}
        self.weight = {i: net.bus(i).priority for i in self.nodes}
        self.rmax = float(sum(self.weight[i] * self.load[i].sum() for i in self.nodes))
        worst = max(max(sc.trepair.values()) for sc in scenarios)
        if worst >= self.T:
            log.warning("horizon %d does not exceed the longest repair time %d", self.T, worst)


def _add_first_stage(b: ModelBuilder, ctx: _Context, cat: VariableCatalog, with_nu: bool, tag: str = ""):
    for ln in ctx.damaged:
        for r in ctx.modes[ln]:
            cat.x[(ln, r)] = b.add_var(f"x[{line_label(ln)}][{r}]{tag}", kind=BINARY)
    for ln in ctx.damaged:
        b.add_row([(cat.x[(ln, r)], 1.0) for r in ctx.modes[ln]], LE, 1.0, f"mode_once[{line_label(ln)}]{tag}")
    if with_nu:
        cat.nu = b.add_var(f"nu{tag}", lb=-ctx.rmax, ub=0.0)


def _add_fictitious(b: ModelBuilder, ctx: _Context, cat: VariableCatalog, tag: str = ""):
    """Spanning-forest certificate on the undamaged topology (scenario free)."""
    n_nodes = len(ctx.nodes)
    big = float(n_nodes - 1)
    for t in range(1, ctx.T + 1):
        for e in ctx.edges:
            lab = line_label(e.key)
            cat.eps[(e.key, t)] = b.add_var(f"eps[{lab}][{t}]{tag}", kind=BINARY)
            cat.f[(e.key, t)] = b.add_var(f"f[{lab}][{t}]{tag}", lb=-big, ub=big)
        b.add_row([(cat.eps[(e.key, t)], 1.0) for e in ctx.edges], EQ, n_nodes - len(ctx.roots),
                  f"tree_size[{t}]{tag}")
        for v in ctx.nodes:
            if v in ctx.roots:
                continue
            terms = []
            for e in ctx.edges:
                if e.dst == v:
                    terms.append((cat.f[(e.key, t)], 1.0))
                elif e.src == v:
                    terms.append((cat.f[(e.key, t)], -1.0))
            b.add_row(terms, EQ, 1.0, f"fict_balance[{v}][{t}]{tag}")
        for e in ctx.edges:
            lab = line_label(e.key)
            fc, ec = cat.f[(e.key, t)], cat.eps[(e.key, t)]
            b.add_row([(fc, 1.0), (ec, -big)], LE, 0.0, f"fict_cap_up[{lab}][{t}]{tag}")
            b.add_row([(fc, -1.0), (ec, -big)], LE, 0.0, f"fict_cap_dn[{lab}][{t}]{tag}")


def _add_scenario(b: ModelBuilder, ctx: _Context, cat: VariableCatalog, sc: Scenario, s: int, *,
                  weight: float, risk: RiskConfig | None, nu_weight: float = 0.0, link_eps: bool = True):
    """Recourse columns and rows of scenario ``s``.

    ``weight`` scales the restoration and excess terms of the objective;
    ``risk`` None drops the excess variable and its row.
    """
    T = ctx.T
    ts = range(1, T + 1)
    lab = {ln: line_label(ln) for ln in [e.key for e in ctx.edges]}
    ders = ctx.fleet.ders
    cand = ctx.candidates

    # DER dispatch
    for g in ders:
        for t in ts:
            for i in cand:
                cat.alpha[(g.id, i, t, s)] = b.add_var(f"alpha[{g.id}][{i}][{t}][{s}]", kind=BINARY)
                cat.Pgd[(g.id, i, t, s)] = b.add_var(f"Pgd[{g.id}][{i}][{t}][{s}]", ub=g.capacity)
            cat.Pgg[(g.id, t, s)] = b.add_var(f"Pgg[{g.id}][{t}][{s}]", ub=g.capacity)
    for i in cand:
        for t in ts:
            cat.Pg[(i, t, s)] = b.add_var(f"Pg[{i}][{t}][{s}]")
    for g in ders:
        for t in ts:
            b.add_row([(cat.alpha[(g.id, i, t, s)], 1.0) for i in cand], LE, 1.0, f"der_one_node[{g.id}][{t}][{s}]")
    if ders:
        for i in cand:
            for t in ts:
                b.add_row([(cat.alpha[(g.id, i, t, s)], 1.0) for g in ders], LE, 1.0,
                          f"node_one_der[{i}][{t}][{s}]")
    for g in ders:
        for i in cand:
            for j in cand:
                if i == j:
                    continue
                tr = g.travel_time(i, j)
                for tau in range(1, tr + 1):
                    for t in range(1, T - tau + 1):
                        b.add_row([(cat.alpha[(g.id, i, t, s)], 1.0), (cat.alpha[(g.id, j, t + tau, s)], 1.0)],
                                  LE, 1.0, f"travel[{g.id}][{i}][{j}][{tau}][{t}][{s}]")
        for t in ts:
            b.add_row([(cat.Pgg[(g.id, t, s)], 1.0)] + [(cat.alpha[(g.id, i, t, s)], -g.capacity) for i in cand],
                      LE, 0.0, f"der_cap[{g.id}][{t}][{s}]")
            b.add_row([(cat.Pgd[(g.id, i, t, s)], 1.0) for i in cand] + [(cat.Pgg[(g.id, t, s)], -1.0)],
                      EQ, 0.0, f"der_split[{g.id}][{t}][{s}]")
            for i in cand:
                b.add_row([(cat.Pgd[(g.id, i, t, s)], 1.0), (cat.alpha[(g.id, i, t, s)], -g.capacity)],
                          LE, 0.0, f"der_at_node[{g.id}][{i}][{t}][{s}]")
    for i in cand:
        for t in ts:
            b.add_row([(cat.Pg[(i, t, s)], 1.0)] + [(cat.Pgd[(g.id, i, t, s)], -1.0) for g in ders],
                      EQ, 0.0, f"node_gen[{i}][{t}][{s}]")

    # repair scheduling
    for ln in ctx.damaged:
        L = lab[ln]
        for t in ts:
            cat.phi[(ln, t, s)] = b.add_var(f"phi[{L}][{t}][{s}]", kind=BINARY)
            cat.a[(ln, t, s)] = b.add_var(f"a[{L}][{t}][{s}]", kind=BINARY)
            cat.mu[(ln, t, s)] = b.add_var(f"mu[{L}][{t}][{s}]", kind=BINARY)
        wbar = float(sum(sc.rs[(ln, r)] for r in ctx.modes[ln]))
        cat.w_bar[(ln, s)] = wbar
        cat.w[(ln, s)] = b.add_var(f"w[{L}][{s}]", ub=wbar)
        xs = [(cat.x[(ln, r)], r) for r in ctx.modes[ln]]
        b.add_row([(cat.phi[(ln, t, s)], 1.0) for t in ts] + [(c, -1.0) for c, _ in xs], EQ, 0.0,
                  f"start_once[{L}][{s}]")
        for t in ts:
            b.add_row([(cat.a[(ln, t, s)], 1.0), (cat.mu[(ln, t, s)], 1.0)]
                      + [(cat.phi[(ln, tau, s)], -1.0) for tau in range(1, t + 1)], EQ, 0.0,
                      f"status[{L}][{t}][{s}]")
        for t in range(1, T):
            b.add_row([(cat.mu[(ln, t, s)], 1.0), (cat.mu[(ln, t + 1, s)], -1.0)], LE, 0.0,
                      f"mu_mono[{L}][{t}][{s}]")
        # sum t*phi + sum a <= sum t*(mu_t - mu_{t-1}) with mu_0 = 0
        terms = [(cat.phi[(ln, t, s)], float(t)) for t in ts] + [(cat.a[(ln, t, s)], 1.0) for t in ts]
        terms += [(cat.mu[(ln, t, s)], 1.0) for t in range(1, T)] + [(cat.mu[(ln, T, s)], -float(T))]
        b.add_row(terms, LE, 0.0, f"finish[{L}][{s}]")
        b.add_row([(cat.a[(ln, t, s)], 1.0) for t in ts] + [(c, -float(sc.trepair[(ln, r)])) for c, r in xs],
                  GE, 0.0, f"duration[{L}][{s}]")
        b.add_row([(cat.w[(ln, s)], 1.0)] + [(c, -float(sc.rs[(ln, r)])) for c, r in xs], EQ, 0.0,
                  f"resource[{L}][{s}]")
        for t in ts:
            z, _ = linearize_bilinear(b, cat.a[(ln, t, s)], cat.w[(ln, s)], wbar, f"z[{L}][{t}][{s}]")
            cat.z[(ln, t, s)] = z
    for t in ts:
        cap = sc.budget_at(t)
        cat.budget[(t, s)] = cap
        b.add_row([(cat.z[(ln, t, s)], 1.0) for ln in ctx.damaged], LE, cap, f"budget[{t}][{s}]")

    # topology
    damaged = set(ctx.damaged)
    for e in ctx.edges:
        L = lab[e.key]
        for t in ts:
            bc = b.add_var(f"beta[{L}][{t}][{s}]", kind=BINARY)
            cat.beta[(e.key, t, s)] = bc
            if e.key in damaged:
                b.add_row([(bc, 1.0), (cat.mu[(e.key, t, s)], -1.0)], LE, 0.0, f"on_if_fixed[{L}][{t}][{s}]")
            if link_eps:
                b.add_row([(bc, 1.0), (cat.eps[(e.key, t)], -1.0)], LE, 0.0, f"on_in_tree[{L}][{t}][{s}]")

    # operation
    for e in ctx.edges:
        L = lab[e.key]
        for t in ts:
            pc = b.add_var(f"P[{L}][{t}][{s}]", lb=-e.max_flow, ub=e.max_flow)
            cat.P[(e.key, t, s)] = pc
            bc = cat.beta[(e.key, t, s)]
            b.add_row([(pc, 1.0), (bc, -e.max_flow)], LE, 0.0, f"flow_up[{L}][{t}][{s}]")
            b.add_row([(pc, -1.0), (bc, -e.max_flow)], LE, 0.0, f"flow_dn[{L}][{t}][{s}]")
    res_cols, res_coef = [], []
    for i in ctx.nodes:
        bus = ctx.net.bus(i)
        for t in ts:
            oc = b.add_var(f"o[{i}][{t}][{s}]", kind=BINARY)
            cat.o[(i, t, s)] = oc
            val = ctx.weight[i] * ctx.load[i][t - 1]
            if val:
                res_cols.append(oc)
                res_coef.append(val)
                b.add_cost(oc, -weight * val)
            if i in ctx.roots:
                cat.G[(i, t, s)] = b.add_var(f"G[{i}][{t}][{s}]", ub=bus.max_gen)
        for t in range(1, T):
            b.add_row([(cat.o[(i, t, s)], 1.0), (cat.o[(i, t + 1, s)], -1.0)], LE, 0.0, f"o_mono[{i}][{t}][{s}]")
    for i in ctx.nodes:
        for t in ts:
            terms = []
            for e in ctx.edges:
                if e.dst == i:
                    terms.append((cat.P[(e.key, t, s)], 1.0))
                elif e.src == i:
                    terms.append((cat.P[(e.key, t, s)], -1.0))
            if (i, t, s) in cat.Pg:
                terms.append((cat.Pg[(i, t, s)], 1.0))
            if (i, t, s) in cat.G:
                terms.append((cat.G[(i, t, s)], 1.0))
            load = ctx.load[i][t - 1]
            if load:
                terms.append((cat.o[(i, t, s)], -load))
            b.add_row(terms, EQ, 0.0, f"balance[{i}][{t}][{s}]")
    cat.restoration[s] = (np.asarray(res_cols, int), np.asarray(res_coef, float))

    # excess over the value at risk
    if risk is not None:
        d = b.add_var(f"Delta[{s}]", lb=0.0, ub=ctx.rmax, cost=weight * risk.lam / (1.0 - risk.alpha))
        cat.Delta[s] = d
        b.add_row([(oc, v) for oc, v in zip(res_cols, res_coef)] + [(cat.nu, 1.0), (d, 1.0)], GE, 0.0,
                  f"excess[{s}]")
        if nu_weight:
            b.add_cost(cat.nu, nu_weight)


def linearize_bilinear(b: ModelBuilder, a_col: int, w_col: int, w_upper: float, name: str):
    """Add ``z = a * w`` for binary ``a`` and ``0 <= w <= w_upper``.

    Returns ``(z column, row ids)``. The lower bound ``z >= 0`` is the
    column bound; the other three inequalities are rows.
    """
    if not math.isfinite(w_upper):
        raise FormulationError(f"{name}: product needs a finite upper bound on w")
    z = b.add_var(name, lb=0.0, ub=max(w_upper, 0.0))
    rows = [
        b.add_row([(z, 1.0), (a_col, -w_upper)], LE, 0.0, f"{name}:le_aw"),
        b.add_row([(z, 1.0), (w_col, -1.0)], LE, 0.0, f"{name}:le_w"),
        b.add_row([(z, 1.0), (w_col, -1.0), (a_col, -w_upper)], GE, -w_upper, f"{name}:ge_w"),
    ]
    return z, rows


def _finish(b: ModelBuilder, ctx: _Context, cat: VariableCatalog, nscen: int) -> MilpProblem:
    cat.lines = list(ctx.damaged)
    cat.modes = dict(ctx.modes)
    cat.nodes = list(ctx.nodes)
    cat.candidates = list(ctx.candidates)
    cat.horizon = ctx.T
    cat.num_scenarios = nscen
    cat.rmax = ctx.rmax
    prob = b.build()
    prob.catalog = cat
    prob.branch_class = branch_classes(prob.num_vars, cat)
    return prob


# repair modes, repair status and timing, then load pickup, switches, DER moves
BRANCH_ORDER = ("x", "mu", "phi", "a", "o", "beta", "alpha")


def branch_classes(num_vars: int, cat: VariableCatalog) -> np.ndarray:
    cls = np.full(num_vars, len(BRANCH_ORDER), np.int16)
    for k, attr in enumerate(BRANCH_ORDER):
        cols = list(getattr(cat, attr).values())
        cls[cols] = k
    return cls


def _as_list(scenarios):
    return list(scenarios.scenarios) if isinstance(scenarios, ScenarioSet) else list(scenarios)


def build_extensive(net: NetworkModel, scenarios, fleet: FleetSpec, risk: RiskConfig, horizon: int,
                    candidates=None) -> MilpProblem:
    """Deterministic equivalent over all scenarios with the excess/VaR rows."""
    scens = _as_list(scenarios)
    ctx = _Context(net, scens, fleet, horizon, candidates)
    b = ModelBuilder()
    cat = VariableCatalog()
    _add_first_stage(b, ctx, cat, with_nu=True)
    b.add_cost(cat.nu, risk.lam)
    _add_fictitious(b, ctx, cat)
    for s, sc in enumerate(scens):
        _add_scenario(b, ctx, cat, sc, s, weight=sc.probability, risk=risk)
    return _finish(b, ctx, cat, len(scens))


def build_ws_problem(net: NetworkModel, scenario: Scenario, fleet: FleetSpec, horizon: int,
                     candidates=None) -> MilpProblem:
    """Single-scenario restoration problem with its own first stage and no risk rows."""
    ctx = _Context(net, [scenario], fleet, horizon, candidates)
    b = ModelBuilder()
    cat = VariableCatalog()
    _add_first_stage(b, ctx, cat, with_nu=False)
    _add_fictitious(b, ctx, cat)
    _add_scenario(b, ctx, cat, scenario, 0, weight=1.0, risk=None)
    return _finish(b, ctx, cat, 1)


def build_ev_problem(net: NetworkModel, table: RepairModeTable, fleet: FleetSpec, horizon: int,
                     budget=30.0, candidates=None) -> MilpProblem:
    """Restoration problem on the mean-value scenario."""
    return build_ws_problem(net, expected_scenario(table, horizon, budget), fleet, horizon, candidates)


def build_scenario_subproblem(net: NetworkModel, scenario: Scenario, fleet: FleetSpec, risk: RiskConfig,
                              multipliers=None, split_copies: bool = True, horizon: int | None = None,
                              candidates=None, rmax_scenarios=None) -> MilpProblem:
    """Scenario block of the split problem with its own first-stage copies.

    Objective: ``p_s * (lam * nu_s + lam / (1 - alpha) * Delta_s - R_s)
    - m_x . x_s - m_nu * nu_s`` where ``multipliers = (m_x, m_nu)`` are the
    scenario's slices ``lam1 H_s`` and ``lam2 K_s``.

    With ``split_copies`` the fictitious spanning-forest columns get a
    private copy in the block; without it they are left out together with
    the rows tying switch states to them.
    """
    if horizon is None:
        raise FormulationError("horizon is required")
    ctx = _Context(net, [scenario], fleet, horizon, candidates)
    b = ModelBuilder()
    cat = VariableCatalog()
    _add_first_stage(b, ctx, cat, with_nu=True)
    if split_copies:
        _add_fictitious(b, ctx, cat)
    p = scenario.probability
    _add_scenario(b, ctx, cat, scenario, 0, weight=p, risk=risk, nu_weight=p * risk.lam, link_eps=split_copies)
    prob = _finish(b, ctx, cat, 1)
    if multipliers is not None:
        mx, mnu = multipliers
        mx = np.asarray(mx, float)
        if mx.shape != (len(cat.x),) or not np.isscalar(mnu):
            raise FormulationError(
                f"multiplier slice has shape {mx.shape}, expected ({len(cat.x)},) plus a scalar")
        c = prob.c.copy()
        c[cat.x_cols] -= mx
        c[cat.nu] -= float(mnu)
        prob = prob.with_objective(c)
    return prob


# -- fixed-x evaluation -----------------------------------------------------


def fix_first_stage(problem: MilpProblem, x_choice: dict, *, relax_to_subset: bool = False) -> MilpProblem:
    """Pin ``x`` columns to ``x_choice`` ((line, r) -> 0/1).

    With ``relax_to_subset`` chosen modes become upper bounds only, so a
    scenario may leave a chosen line unrepaired.
    """
    cat = problem.catalog
    lb, ub = problem.lb.copy(), problem.ub.copy()
    for key, col in cat.x.items():
        v = float(x_choice.get(key, 0))
        ub[col] = v
        lb[col] = 0.0 if relax_to_subset else v
    return problem.with_bounds(lb, ub)


def forest_certificate(net: NetworkModel) -> dict:
    """Flows ``f`` on the full (radial) edge set that satisfy the fictitious rows.

    Every edge is in the forest; the flow on an edge is the number of nodes
    below it, signed by the stored orientation.
    """
    roots = sorted(net.substation_ids)
    adj = net.adjacency()
    parent = {}
    order = []
    for r in roots:
        parent[r] = None
        stack = [r]
        while stack:
            v = stack.pop()
            order.append(v)
            for w in adj[v]:
                if w not in parent:
                    parent[w] = v
                    stack.append(w)
    size = {v: 1 for v in order}
    for v in reversed(order):
        if parent[v] is not None:
            size[parent[v]] += size[v]
    flow = {}
    for e in net.edges:
        if parent.get(e.dst) == e.src:
            flow[e.key] = float(size[e.dst])
        elif parent.get(e.src) == e.dst:
            flow[e.key] = -float(size[e.src])
        else:  # pragma: no cover - radial input makes every edge a tree edge
            raise FormulationError(f"edge {e.key} is not part of the spanning forest")
    return flow


def x_vector_to_choice(cat: VariableCatalog, xvec) -> dict:
    return {key: int(round(v)) for key, v in zip(cat.x_keys, xvec)}


def enumerate_first_stage(lines, modes) -> list[dict]:
    """Every mode assignment with at most one mode per line."""
    out = [{}]
    for ln in lines:
        nxt = []
        for base in out:
            for r in [None] + list(modes[ln]):
                d = dict(base)
                for rr in modes[ln]:
                    d[(ln, rr)] = int(rr == r)
                nxt.append(d)
        out = nxt
    return out
