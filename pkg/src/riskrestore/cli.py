"""Command-line entry point: ``riskrestore sample|solve|metrics|preassign``.

Files are the interface; stdout carries short human summaries only.

Exit codes: 0 optimal or gap limit reached, 1 I/O or validation error,
2 usage error, 3 infeasible, 4 time or node limit.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import pipeline
from .bnb import GAP_LIMIT, INFEASIBLE_STATUS, OPTIMAL_STATUS, write_convergence_csv
from .dualdecomp import write_trace
from .formulation import FleetSpec, FormulationError, RiskConfig
from .metrics import MetricsError, mean_risk_report, write_phi_csv, write_recovery_csv
from .netgraph import NetworkError, connected_components, degrees, load_network, preassign_ders
from .uncertainty import ScenarioError, load_mode_table, load_scenarios, mttr, sample_scenarios

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_LIMIT = 0, 1, 2, 3, 4

_INPUT_ERRORS = (OSError, ValueError, KeyError, json.JSONDecodeError, NetworkError, ScenarioError,
                 FormulationError, MetricsError)


def status_exit_code(status: str) -> int:
    if status in (OPTIMAL_STATUS, GAP_LIMIT):
        return EXIT_OK
    if status == INFEASIBLE_STATUS:
        return EXIT_INFEASIBLE
    return EXIT_LIMIT


class _Fail(click.ClickException):
    exit_code = EXIT_ERROR


def _fail(msg):
    raise _Fail(msg)


def _budget(text):
    parts = [float(v) for v in str(text).split(",") if v.strip()]
    return parts[0] if len(parts) == 1 else parts


def _load_inputs(network, fleet, scenarios_file, modes, count, seed, horizon, budget):
    try:
        net = load_network(network)
        fleet_raw = json.loads(Path(fleet).read_text())
        fl = FleetSpec.from_dict(fleet_raw)
        table = None
        if scenarios_file:
            sc = load_scenarios(scenarios_file)
            if modes:
                table = load_mode_table(modes, net)
        elif modes:
            if horizon is None:
                raise click.UsageError("--horizon is required when sampling from --modes")
            table = load_mode_table(modes, net)
            sc = sample_scenarios(table, count, horizon, _budget(budget), seed)
        else:
            raise click.UsageError("give --scenarios-file or --modes")
    except click.UsageError:
        raise
    except _INPUT_ERRORS as exc:
        _fail(f"cannot load inputs: {exc}")
    horizon = sc.horizon if horizon is None else horizon
    damaged = {e.key for e in net.damaged}
    missing = {ln for ln in sc.lines if ln not in damaged}
    if missing:
        _fail(f"scenario lines {sorted(missing)} are not damaged lines of the network")
    return net, fleet_raw, fl, sc, table, horizon


def _input_options(f):
    opts = [
        click.option("--network", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--fleet", required=True, type=click.Path(exists=True, dir_okay=False)),
        click.option("--scenarios-file", type=click.Path(exists=True, dir_okay=False),
                     help="Scenario set JSON (from `sample`)."),
        click.option("--modes", type=click.Path(exists=True, dir_okay=False),
                     help="Repair-mode table; scenarios are sampled when no file is given."),
        click.option("--count", type=click.IntRange(min=1), default=20, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--horizon", type=click.IntRange(min=1)),
        click.option("--budget", default="30", show_default=True, help="Scalar or comma list per step."),
        click.option("--lambda", "lam", type=click.FloatRange(min=0), default=0.0, show_default=True),
        click.option("--alpha", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=0.8,
                     show_default=True),
        click.option("--solver", type=click.Choice(pipeline.SOLVERS), default="extensive", show_default=True),
        click.option("--gap-tol", type=click.FloatRange(min=0), default=1e-6, show_default=True),
        click.option("--time-limit", type=click.FloatRange(min=0), default=math.inf),
        click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".", show_default=True),
        click.option("--no-numba", is_flag=True, help="Use the numpy kernels."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


@click.group()
def main():
    """Risk-averse restoration planning with repair-mode and scenario solvers."""


@main.command()
@click.option("--modes", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--network", type=click.Path(exists=True, dir_okay=False),
              help="Needed when the mode table lists no lines.")
@click.option("--scenarios", "count", required=True, type=click.IntRange(min=1))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--horizon", type=click.IntRange(min=1), required=True)
@click.option("--budget", default="30", show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="scenarios.json", show_default=True)
def sample(modes, network, count, seed, horizon, budget, out_path):
    """Sample a scenario set and print per-mode means."""
    try:
        net = load_network(network) if network else None
        table = load_mode_table(modes, net)
        sc = sample_scenarios(table, count, horizon, _budget(budget), seed)
        sc.save(out_path)
    except _INPUT_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"{count} scenarios, seed {seed}, horizon {horizon} -> {out_path}")
    click.echo(f"{'line':>10} {'mode':>4} {'mean t':>8} {'mttr':>8} {'mean rs':>8}")
    p = sc.probabilities
    for line, r in sc.keys:
        md = table.mode(line, r)
        tr = float(p @ [s.trepair[(line, r)] for s in sc])
        rs = float(p @ [s.rs[(line, r)] for s in sc])
        click.echo(f"{line[0]:>4}-{line[1]:<5} {r:>4} {tr:8.3f} {mttr(md.scale, table.shape):8.3f} {rs:8.3f}")


@main.command()
@_input_options
@click.option("--form", type=click.Choice(pipeline.FORMS), default="rp", show_default=True)
@click.option("--trace", is_flag=True, help="Write the decomposition tree to trace.json (dd solver).")
def solve(network, fleet, scenarios_file, modes, count, seed, horizon, budget, lam, alpha, solver, gap_tol,
          time_limit, out_dir, no_numba, form, trace):
    """Solve one problem form and write solution, recovery and convergence files."""
    net, fleet_raw, fl, sc, table, horizon = _load_inputs(network, fleet, scenarios_file, modes, count, seed,
                                                          horizon, budget)
    risk = RiskConfig(lam, alpha)
    try:
        res = pipeline.solve_form(form, net, sc, fl, risk, table=table, solver=solver, horizon=horizon,
                                  gap_tol=gap_tol, time_limit=time_limit, trace=trace,
                                  use_numba=False if no_numba else None)
    except _INPUT_ERRORS as exc:
        _fail(f"solve failed: {exc}")
    out = Path(out_dir)
    inputs = {"network": net.to_dict(), "fleet": fleet_raw, "scenarios": sc.to_dict(), "horizon": horizon,
              "lambda": lam, "alpha": alpha, "seed": sc.seed, "candidates": None}
    try:
        out.mkdir(parents=True, exist_ok=True)
        data = pipeline.solution_to_dict(res, net, horizon, inputs)
        (out / "solution.json").write_text(json.dumps(data, indent=1, default=_jsonable))
        write_convergence_csv(out / "convergence.csv", res.log)
        if res.feasible:
            write_recovery_csv(out / "recovery.csv", pipeline.recovery_profile(net, horizon, res))
        if trace and res.trace:
            write_trace(out / "trace.json", res.trace)
    except OSError as exc:
        _fail(f"cannot write outputs: {exc}")
    click.echo(f"form {form}  solver {solver}  status {res.status}")
    if res.feasible:
        click.echo(f"incumbent {res.objective:.6f}  bound {res.best_bound:.6f}  gap {res.gap:.3e}  "
                   f"nodes {res.node_count}  time {res.wall_time:.2f}s")
        r = res.restoration
        click.echo(f"restoration mean {float(res.probabilities @ r):.4f}  min {r.min():.4f}  max {r.max():.4f}")
    sys.exit(status_exit_code(res.status))


@main.command()
@_input_options
def metrics(network, fleet, scenarios_file, modes, count, seed, horizon, budget, lam, alpha, solver, gap_tol,
            time_limit, out_dir, no_numba):
    """Compute WS, RP and EV values with their mean-risk variants."""
    net, fleet_raw, fl, sc, table, horizon = _load_inputs(network, fleet, scenarios_file, modes, count, seed,
                                                          horizon, budget)
    risk = RiskConfig(lam, alpha)
    try:
        rep = mean_risk_report(net, sc, fl, risk, solver, table=table, horizon=horizon, gap_tol=gap_tol,
                               time_limit=time_limit, seed=sc.seed, use_numba=False if no_numba else None)
    except MetricsError as exc:
        status = str(exc)
        click.echo(status, err=True)
        sys.exit(EXIT_INFEASIBLE if INFEASIBLE_STATUS in status else EXIT_LIMIT)
    except _INPUT_ERRORS as exc:
        _fail(f"metrics failed: {exc}")
    out = Path(out_dir)
    nominal = pipeline._nominal_area(net, horizon)
    phi = np.asarray(rep.details["mrrp_restoration"]) / nominal
    try:
        out.mkdir(parents=True, exist_ok=True)
        rep.save(out / "metrics.json")
        write_phi_csv(out / "phi.csv", phi, [s.id for s in sc])
    except OSError as exc:
        _fail(f"cannot write outputs: {exc}")
    click.echo(f"WS {rep.ws:.4f}  RP {rep.rp:.4f}  EV {rep.ev:.4f}")
    click.echo(f"MRWS {rep.mrws:.4f}  MRRP {rep.mrrp:.4f}  MREV {rep.mrev:.4f}")
    click.echo(f"MRVPI {rep.mrvpi:.4f}  MRVSS {rep.mrvss:.4f}  improvement {rep.improvement_pct:.2f}%")


@main.command()
@click.option("--network", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold", type=click.IntRange(min=1), default=10, show_default=True,
              help="Islands at least this large get a second DER host.")
def preassign(network, threshold):
    """Print the islands left by damaged lines and the chosen DER hosts."""
    try:
        net = load_network(network)
    except _INPUT_ERRORS as exc:
        _fail(str(exc))
    damaged = [e.key for e in net.damaged]
    comps = connected_components(net, damaged)
    isolated = [c for c in comps if not c & net.substation_ids]
    if not isolated:
        click.echo("no isolated components")
        return
    deg = degrees(net, damaged)
    chosen = preassign_ders(net, damaged, threshold)
    click.echo("components: " + " ".join("{" + ",".join(map(str, sorted(c))) + "}" for c in comps))
    for c in isolated:
        hosts = sorted(chosen & c)
        click.echo("island {" + ",".join(map(str, sorted(c))) + "}: "
                   + ", ".join(f"{v} (degree {deg[v]})" for v in hosts))
    click.echo("candidates: " + ",".join(map(str, sorted(chosen))))


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(type(v))


if __name__ == "__main__":  # pragma: no cover
    main()
