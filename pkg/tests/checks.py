"""Solver-independent checks on extensive-form solution vectors."""

import numpy as np

from riskrestore.netgraph import is_forest


def linearization_residual(problem, values, scenarios):
    """Worst |z - a*w| and worst budget excess over all (line, t, s)."""
    cat = problem.catalog
    v = np.asarray(values)
    worst_prod = 0.0
    for (ln, t, s), zc in cat.z.items():
        a = round(v[cat.a[(ln, t, s)]])
        worst_prod = max(worst_prod, abs(v[zc] - a * v[cat.w[(ln, s)]]))
    worst_budget = -np.inf
    for s, sc in enumerate(scenarios):
        for t in range(1, cat.horizon + 1):
            used = sum(v[cat.z[(ln, t, s)]] for ln in cat.lines)
            worst_budget = max(worst_budget, used - sc.budget_at(t))
    return worst_prod, worst_budget


def radiality_failures(net, problem, values):
    """List of (t, s, reason) where switching or fictitious rows break radiality."""
    cat = problem.catalog
    v = np.asarray(values)
    T, S = cat.horizon, cat.num_scenarios
    roots = net.substation_ids
    out = []
    for s in range(S):
        for t in range(1, T + 1):
            on = [e.key for e in net.edges if v[cat.beta[(e.key, t, s)]] > 0.5]
            if not is_forest(net, on):
                out.append((t, s, "switched-on edges contain a cycle"))
    for t in range(1, T + 1):
        eps = sum(round(v[cat.eps[(e.key, t)]]) for e in net.edges)
        if eps != len(net.nodes) - len(roots):
            out.append((t, None, f"{eps} fictitious edges, expected {len(net.nodes) - len(roots)}"))
        for node in net.node_ids:
            if node in roots:
                continue
            inflow = 0.0
            for e in net.edges:
                f = v[cat.f[(e.key, t)]]
                if e.dst == node:
                    inflow += f
                elif e.src == node:
                    inflow -= f
            if abs(inflow - 1.0) > 1e-6:
                out.append((t, None, f"node {node} fictitious inflow {inflow}"))
    return out


def monotonicity_failures(problem, values):
    cat = problem.catalog
    v = np.asarray(values)
    bad = []
    for name in ("o", "mu"):
        table = getattr(cat, name)
        for (k, t, s), col in table.items():
            nxt = table.get((k, t + 1, s))
            if nxt is not None and v[col] > v[nxt] + 1e-6:
                bad.append((name, k, t, s))
    return bad
