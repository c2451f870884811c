"""Resilience level, VaR/CVaR statistics and the WS/RP/EV value metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np


class MetricsError(ValueError):
    pass


def cvar(outcomes, probs, alpha: float) -> tuple[float, float]:
    """VaR and CVaR of the losses ``-outcomes`` at level ``alpha``.

    VaR is the lower ``alpha``-quantile: the smallest loss whose cumulative
    probability reaches ``alpha``. CVaR is ``VaR + E[(loss - VaR)+] / (1 - alpha)``.

    Examples
    --------
    >>> cvar([-1, -2, -3, -4], [0.25] * 4, 0.75)
    (3.0, 4.0)
    """
    out = np.asarray(outcomes, float).ravel()
    p = np.asarray(probs, float).ravel()
    if out.size == 0:
        raise MetricsError("cvar of an empty outcome set")
    if p.shape != out.shape:
        raise MetricsError("outcomes and probabilities differ in length")
    if not 0 < alpha < 1:
        raise MetricsError("alpha must lie in (0, 1)")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise MetricsError("probabilities must be non-negative and sum to one")
    losses = -out
    order = np.argsort(losses, kind="stable")
    cum = np.cumsum(p[order])
    k = int(np.searchsorted(cum, alpha - 1e-12, side="left"))
    k = min(k, out.size - 1)
    var = float(losses[order][k])
    tail = float(np.dot(p, np.maximum(losses - var, 0.0)))
    return var, var + tail / (1.0 - alpha)


@dataclass
class RecoveryProfile:
    """Restored fraction of weighted demand per scenario and step.

    ``restored[s, t]`` is the weighted load served in scenario ``s`` at
    step ``t + 1``; ``nominal[t]`` the weighted demand at that step.
    """

    restored: np.ndarray
    nominal: np.ndarray
    probabilities: np.ndarray | None = None

    def __post_init__(self):
        self.restored = np.atleast_2d(np.asarray(self.restored, float))
        self.nominal = np.asarray(self.nominal, float).ravel()
        if self.restored.shape[1] != self.nominal.size:
            raise MetricsError("profile and nominal curve have different horizons")

    @property
    def fractions(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(self.nominal > 0, self.restored / self.nominal, 1.0)
        return frac

    def mean_fraction(self) -> np.ndarray:
        p = self.probabilities
        if p is None:
            p = np.full(self.restored.shape[0], 1.0 / self.restored.shape[0])
        return p @ self.fractions

    def check(self, tol=1e-9) -> None:
        frac = self.fractions
        if np.any(frac < -tol) or np.any(frac > 1 + tol):
            raise MetricsError("restored fraction outside [0, 1]")
        if np.any(np.diff(frac, axis=1) < -tol):
            raise MetricsError("restored fraction decreases over time")


def resilience(profile: RecoveryProfile, scenario: int | None = None):
    """Area under the restored curve over area under the nominal curve.

    Returns one value for ``scenario`` or an array over all scenarios.
    """
    total = float(profile.nominal.sum())
    if total <= 0:
        raise MetricsError("nominal curve has zero area")
    phi = profile.restored.sum(axis=1) / total
    return float(phi[scenario]) if scenario is not None else phi


def profile_from_restoration(net, horizon: int, o_values) -> RecoveryProfile:
    """Build a profile from per-scenario ``{(node, t): o}`` maps."""
    nodes = net.node_ids
    w = np.array([net.bus(i).priority for i in nodes])
    load = np.array([net.bus(i).load_profile(horizon) for i in nodes])
    nominal = w @ load
    rows = []
    for o in o_values:
        served = np.array([[o.get((i, t), 0.0) for t in range(1, horizon + 1)] for i in nodes])
        rows.append(((w[:, None] * load) * np.round(served)).sum(axis=0))
    return RecoveryProfile(np.array(rows), nominal)


def mean_variance(phi, probs=None) -> tuple[float, float]:
    phi = np.asarray(phi, float)
    p = np.full(phi.size, 1.0 / phi.size) if probs is None else np.asarray(probs, float)
    m = float(p @ phi)
    return m, float(p @ (phi - m) ** 2)


@dataclass
class MeanRiskReport:
    """WS/RP/EV values in restoration units plus their mean-risk variants.

    Mean-risk values are ``E[R] - lam * CVaR(-R)``, so larger is better
    throughout and the value-of-information differences are non-negative.
    """

    ws: float
    rp: float
    ev: float
    mrws: float
    mrrp: float
    mrev: float
    lam: float = 0.0
    alpha: float = 0.8
    config: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def mrvpi(self) -> float:
        return self.mrws - self.mrrp

    @property
    def mrvss(self) -> float:
        return self.mrrp - self.mrev

    @property
    def vpi(self) -> float:
        return self.ws - self.rp

    @property
    def vss(self) -> float:
        return self.rp - self.ev

    @property
    def improvement_pct(self) -> float:
        if self.mrev == 0:
            return math.nan
        return self.mrvss / abs(self.mrev) * 100.0

    def check(self, tol=1e-6) -> None:
        if self.mrvpi < -tol or self.mrvss < -tol:
            raise MetricsError(f"value chain violated: mrvpi={self.mrvpi}, mrvss={self.mrvss}")

    def to_dict(self) -> dict:
        out = {"schema": 1}
        out.update({k: v for k, v in asdict(self).items() if k not in ("config", "details")})
        out.update(mrvpi=self.mrvpi, mrvss=self.mrvss, vpi=self.vpi, vss=self.vss,
                   improvement_pct=self.improvement_pct, config=self.config, details=self.details)
        return out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True, default=_jsonable)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def mean_risk_value(restoration, probs, lam: float, alpha: float) -> float:
    """``E[R] - lam * CVaR_alpha(-R)`` (restoration units, larger is better)."""
    r = np.asarray(restoration, float)
    p = np.asarray(probs, float)
    _, cv = cvar(r, p, alpha)
    return float(p @ r) - lam * cv


def report_from_outcomes(ws_r, rp_r, ev_r, probs, lam: float, alpha: float, **extra) -> MeanRiskReport:
    """Assemble a report from per-scenario restoration of the three solutions.

    ``ws_r`` holds each scenario's own optimum, ``rp_r`` the recourse values
    under the stochastic first stage and ``ev_r`` those under the mean-value
    first stage.
    """
    p = np.asarray(probs, float)
    return MeanRiskReport(
        ws=float(p @ np.asarray(ws_r, float)),
        rp=float(p @ np.asarray(rp_r, float)),
        ev=float(p @ np.asarray(ev_r, float)),
        mrws=mean_risk_value(ws_r, p, lam, alpha),
        mrrp=mean_risk_value(rp_r, p, lam, alpha),
        mrev=mean_risk_value(ev_r, p, lam, alpha),
        lam=lam,
        alpha=alpha,
        **extra,
    )


def mean_risk_report(net, scenarios, fleet, risk, solver="extensive", *, table=None, horizon=None, gap_tol=1e-6,
                     time_limit=math.inf, candidates=None, seed=None, use_numba=None) -> MeanRiskReport:
    """Solve the WS, RP and EV forms and report their values and mean-risk variants.

    Parameters
    ----------
    solver : {"extensive", "dd", "enumerate"}
        Route for the two recourse problems (risk-neutral and at ``risk.lam``).
    table : RepairModeTable, optional
        Defines the mean-value scenario for EV. Falls back to the table stored
        in the scenario set's metadata, then to the probability-weighted mean
        of the scenarios themselves.

    Raises
    ------
    MetricsError
        If any of the solves is infeasible or stops short of ``gap_tol``.
    """
    from . import pipeline
    from .formulation import RiskConfig
    from .uncertainty import RepairModeTable

    horizon = scenarios.horizon if horizon is None else horizon
    probs = scenarios.probabilities
    common = dict(horizon=horizon, candidates=candidates, use_numba=use_numba)
    ws = pipeline.solve_ws(net, scenarios, fleet, gap_tol=gap_tol, time_limit=time_limit, **common)
    _require(ws, "ws")
    neutral = RiskConfig(0.0, risk.alpha)
    rp_kw = dict(common, solver=solver, gap_tol=gap_tol, time_limit=time_limit)
    if solver == "enumerate":
        # one set of recourse solves serves both risk settings
        rp_kw["model"] = pipeline.first_stage_model(net, scenarios, fleet, neutral, horizon, candidates=candidates,
                                                    use_numba=use_numba)
    rp0 = pipeline.solve_rp(net, scenarios, fleet, neutral, **rp_kw)
    _require(rp0, "rp")
    rp_lam = rp0
    if risk.lam > 0:
        rp_lam = pipeline.solve_rp(net, scenarios, fleet, risk, **rp_kw)
        _require(rp_lam, "risk-averse rp")
    if table is None and scenarios.meta.get("table"):
        table = RepairModeTable.from_dict(scenarios.meta["table"])
    if table is not None:
        ev = pipeline.solve_ev(net, scenarios, fleet, table, risk, gap_tol=gap_tol, time_limit=time_limit, **common)
    else:
        ev = pipeline.solve_ev_empirical(net, scenarios, fleet, risk, gap_tol=gap_tol, time_limit=time_limit,
                                         **common)
    _require(ev, "ev")
    lam, alpha = risk.lam, risk.alpha
    ws_r, rp_r, ev_r = ws.restoration, rp0.restoration, ev.restoration
    report = MeanRiskReport(
        ws=float(probs @ ws_r),
        rp=float(probs @ rp_r),
        ev=float(probs @ ev_r),
        mrws=mean_risk_value(ws_r, probs, lam, alpha),
        mrrp=mean_risk_value(rp_lam.restoration, probs, lam, alpha),
        mrev=mean_risk_value(ev_r, probs, lam, alpha),
        lam=lam,
        alpha=alpha,
        config={"lambda": lam, "alpha": alpha, "seed": scenarios.seed if seed is None else seed, "solver": solver,
                "horizon": horizon, "scenarios": len(scenarios), "gap_tol": gap_tol},
        details={
            "ws_restoration": ws_r.tolist(),
            "rp_restoration": rp_r.tolist(),
            "mrrp_restoration": rp_lam.restoration.tolist(),
            "ev_restoration": ev_r.tolist(),
            "rp_x": _x_json(rp0.x),
            "mrrp_x": _x_json(rp_lam.x),
            "ev_x": _x_json(ev.x),
            "ev_violated_rows": {str(s): o.violated_rows for s, o in enumerate(ev.outcomes) if o.violated_rows},
            "statuses": {"ws": ws.status, "rp": rp0.status, "mrrp": rp_lam.status, "ev": ev.status},
        },
    )
    return report


def _require(result, name):
    if not result.feasible:
        raise MetricsError(f"{name} solve failed with status {result.status}")
    if result.status not in ("Optimal", "GapLimit"):
        raise MetricsError(f"{name} solve stopped early with status {result.status}")


def _x_json(x):
    if x is None:
        return None
    return [{"line": list(k[0]), "mode": k[1], "value": int(v)} for k, v in sorted(x.items())]


def write_phi_csv(path, phi, ids=None) -> None:
    ids = range(len(phi)) if ids is None else ids
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["scenario", "phi"])
        for s, v in zip(ids, phi):
            wr.writerow([s, repr(float(v))])


def write_recovery_csv(path, profile: RecoveryProfile, ids=None) -> None:
    frac = profile.fractions
    ids = range(frac.shape[0]) if ids is None else ids
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["scenario", "t", "restored_fraction"])
        for s, row in zip(ids, frac):
            for t, v in enumerate(row, start=1):
                wr.writerow([s, t, repr(float(v))])
