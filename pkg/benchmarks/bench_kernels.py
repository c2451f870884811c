"""Compare the numba and numpy simplex kernels.

Two levels are timed: the eta-file transforms in isolation (where the
compiled loops matter most) and a complete branch-and-bound solve of the
six-bus two-scenario extensive form on each path.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import time
from importlib.resources import files

import numpy as np

from riskrestore import _kernels
from riskrestore.bnb import solve_milp
from riskrestore.formulation import RiskConfig, build_extensive, load_fleet
from riskrestore.netgraph import load_network
from riskrestore.uncertainty import load_scenarios


def _best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_etas(repeat, m=400, count=200, seed=0):
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, m, count).astype(np.int64)
    vals = rng.normal(size=(count, m))
    vals[np.arange(count), rows] += 5.0  # keep pivots away from zero
    x0 = rng.normal(size=m)
    out = {}
    for name, use in (("numpy", False), ("numba", True)):
        if use and not _kernels.HAVE_NUMBA:
            continue
        k = _kernels.select(use)
        k.ftran_etas(x0.copy(), rows, vals, count)  # compile outside the timing
        k.btran_etas(x0.copy(), rows, vals, count)
        out[name] = (
            _best_of(lambda: k.ftran_etas(x0.copy(), rows, vals, count), repeat),
            _best_of(lambda: k.btran_etas(x0.copy(), rows, vals, count), repeat),
        )
    return out


def bench_solve(repeat):
    fx = files("riskrestore") / "fixtures"
    net = load_network(fx / "toy_network.json")
    fleet = load_fleet(fx / "toy_fleet.json")
    scen = load_scenarios(fx / "toy_scenarios.json")
    prob = build_extensive(net, scen, fleet, RiskConfig(0.0, 0.8), scen.horizon)
    out = {}
    for name, use in (("numpy", False), ("numba", True)):
        if use and not _kernels.HAVE_NUMBA:
            continue
        solve_milp(prob, use_numba=use, node_limit=5)  # warm-up / compile
        objs = []
        t = _best_of(lambda: objs.append(solve_milp(prob, use_numba=use).objective), repeat)
        out[name] = (t, objs[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    etas = bench_etas(max(args.repeat, 5))
    print("eta transforms, m=400, 200 etas (best of runs)")
    for name, (ft, bt) in etas.items():
        print(f"  {name:6s} ftran {ft * 1e3:8.3f} ms   btran {bt * 1e3:8.3f} ms")
    if len(etas) == 2:
        print(f"  speed-up ftran x{etas['numpy'][0] / etas['numba'][0]:.1f}, "
              f"btran x{etas['numpy'][1] / etas['numba'][1]:.1f}")
    solves = bench_solve(args.repeat)
    print("toy extensive form, full branch-and-bound")
    for name, (t, obj) in solves.items():
        print(f"  {name:6s} {t:8.3f} s   objective {obj:.6f}")
    if len(solves) == 2:
        print(f"  speed-up x{solves['numpy'][0] / solves['numba'][0]:.2f}")


if __name__ == "__main__":
    main()
