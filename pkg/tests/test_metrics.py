import csv
import doctest

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import riskrestore.metrics as metrics_mod
from riskrestore.formulation import RiskConfig
from riskrestore.metrics import (
    MeanRiskReport,
    MetricsError,
    RecoveryProfile,
    cvar,
    mean_risk_report,
    mean_risk_value,
    mean_variance,
    report_from_outcomes,
    resilience,
    write_phi_csv,
    write_recovery_csv,
)
from riskrestore.uncertainty import ScenarioSet


def _rockafellar_min(losses, probs, alpha):
    """CVaR as min over nu of nu + E[(L - nu)+]/(1 - alpha), scanned over the support."""
    losses, probs = np.asarray(losses, float), np.asarray(probs, float)
    return min(v + probs @ np.maximum(losses - v, 0) / (1 - alpha) for v in losses)


def _tail_mean(losses, probs, alpha):
    """Mean of the worst (1 - alpha) probability mass, splitting the boundary atom."""
    order = np.argsort(losses)[::-1]
    left, acc = 1 - alpha, 0.0
    for k in order:
        take = min(probs[k], left)
        acc += take * losses[k]
        left -= take
        if left <= 1e-15:
            break
    return acc / (1 - alpha)


def test_doctests():
    res = doctest.testmod(metrics_mod)
    assert res.attempted > 0 and res.failed == 0


def test_quartile_example():
    var, cv = cvar([-1, -2, -3, -4], [0.25] * 4, 0.75)
    assert (var, cv) == (3.0, 4.0)
    assert cv == pytest.approx(_tail_mean(np.array([1, 2, 3, 4.0]), np.full(4, 0.25), 0.75))


def test_degenerate_distribution():
    var, cv = cvar([-7.5] * 3, [0.2, 0.3, 0.5], 0.9)
    assert var == cv == 7.5


def test_validation():
    with pytest.raises(MetricsError):
        cvar([], [], 0.5)
    with pytest.raises(MetricsError):
        cvar([1, 2], [0.5, 0.6], 0.5)
    with pytest.raises(MetricsError):
        cvar([1, 2], [0.5, 0.5], 1.0)


dists = st.integers(1, 8).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-50, 50, allow_nan=False), min_size=n, max_size=n),
    st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n),
))


@settings(max_examples=120, deadline=None)
@given(d=dists, alpha=st.floats(0.05, 0.95))
def test_cvar_matches_two_oracles(d, alpha):
    r, w = d
    p = np.array(w) / np.sum(w)
    assume(abs(p.sum() - 1) < 1e-12)
    losses = -np.array(r)
    var, cv = cvar(r, p, alpha)
    assert cv == pytest.approx(_rockafellar_min(losses, p, alpha), abs=1e-8)
    assert cv == pytest.approx(_tail_mean(losses, p, alpha), abs=1e-7)
    assert var <= cv + 1e-9
    assert cv >= p @ losses - 1e-9


@settings(max_examples=80, deadline=None)
@given(d=dists, alpha=st.floats(0.05, 0.95), shift=st.floats(-20, 20), scale=st.floats(0.1, 10))
def test_cvar_translation_and_homogeneity(d, alpha, shift, scale):
    r, w = d
    p = np.array(w) / np.sum(w)
    assume(abs(p.sum() - 1) < 1e-12)
    r = np.array(r)
    _, base = cvar(r, p, alpha)
    _, moved = cvar(r + shift, p, alpha)
    _, scaled = cvar(scale * r, p, alpha)
    assert moved == pytest.approx(base - shift, abs=1e-7)
    assert scaled == pytest.approx(scale * base, abs=1e-7 * max(1, scale))


def test_resilience_examples():
    prof = RecoveryProfile(np.array([[0, 5, 10, 10], [10, 10, 10, 10]]), np.full(4, 10.0))
    assert resilience(prof, 0) == pytest.approx(0.625)
    np.testing.assert_allclose(resilience(prof), [0.625, 1.0])
    prof.check()
    np.testing.assert_allclose(prof.mean_fraction(), [0.5, 0.75, 1.0, 1.0])


def test_resilience_is_scale_free():
    restored = np.array([[1.0, 2.0, 4.0]])
    nominal = np.array([4.0, 4.0, 4.0])
    a = resilience(RecoveryProfile(restored, nominal), 0)
    b = resilience(RecoveryProfile(restored * 37.0, nominal * 37.0), 0)
    assert a == pytest.approx(b)


def test_profile_checks():
    with pytest.raises(MetricsError, match="decreases"):
        RecoveryProfile(np.array([[5.0, 3.0]]), np.array([5.0, 5.0])).check()
    with pytest.raises(MetricsError, match="outside"):
        RecoveryProfile(np.array([[6.0, 6.0]]), np.array([5.0, 5.0])).check()
    with pytest.raises(MetricsError, match="horizons"):
        RecoveryProfile(np.array([[1.0]]), np.array([5.0, 5.0]))
    with pytest.raises(MetricsError, match="zero area"):
        resilience(RecoveryProfile(np.zeros((1, 2)), np.zeros(2)))


def test_mean_variance():
    assert mean_variance([1.0, 3.0]) == (2.0, 1.0)
    assert mean_variance([1.0, 3.0], [0.75, 0.25]) == (1.5, 0.75)


def test_report_chain_and_differences():
    p = np.array([0.5, 0.5])
    rep = report_from_outcomes([10, 8], [9, 7], [9, 5], p, 1.0, 0.5)
    assert (rep.ws, rep.rp, rep.ev) == (9.0, 8.0, 7.0)
    # losses -10,-8 at alpha .5: VaR -10, CVaR -8
    assert rep.mrws == pytest.approx(9.0 + 8.0)
    assert rep.mrvpi == pytest.approx(rep.mrws - rep.mrrp)
    assert rep.mrvss == pytest.approx(rep.mrrp - rep.mrev)
    rep.check()
    bad = MeanRiskReport(1.0, 2.0, 0.0, 1.0, 2.0, 0.0)
    with pytest.raises(MetricsError, match="value chain"):
        bad.check()


def test_mean_risk_value_neutral_is_mean():
    assert mean_risk_value([4.0, 8.0], [0.25, 0.75], 0.0, 0.8) == 7.0


def test_report_on_toy(toy, tmp_path):
    rep = mean_risk_report(toy["net"], toy["scenarios"], toy["fleet"], RiskConfig(1.0, 0.8), table=toy["table"])
    assert rep.ws >= rep.rp - 1e-6 >= rep.ev - 2e-6
    rep.check()
    assert rep.config["lambda"] == 1.0 and rep.config["solver"] == "extensive"
    rep.save(tmp_path / "m.json")
    import json

    back = json.loads((tmp_path / "m.json").read_text())
    assert back["mrvss"] == pytest.approx(rep.mrvss)


def test_identical_scenarios_have_no_value_of_information(toy):
    sc = toy["scenarios"][0]
    same = ScenarioSet([type(sc)(k, 0.5, sc.trepair, sc.rs, sc.budget) for k in range(2)], None, 4)
    rep = mean_risk_report(toy["net"], same, toy["fleet"], RiskConfig(0.5, 0.8))
    assert rep.mrvpi == pytest.approx(0.0, abs=1e-6)
    assert rep.vpi == pytest.approx(0.0, abs=1e-6)


def test_csv_writers(tmp_path):
    write_phi_csv(tmp_path / "phi.csv", [0.5, 0.25])
    rows = list(csv.DictReader(open(tmp_path / "phi.csv")))
    assert [float(r["phi"]) for r in rows] == [0.5, 0.25]
    prof = RecoveryProfile(np.array([[1.0, 2.0]]), np.array([2.0, 2.0]))
    write_recovery_csv(tmp_path / "rec.csv", prof)
    rows = list(csv.DictReader(open(tmp_path / "rec.csv")))
    assert [(r["t"], float(r["restored_fraction"])) for r in rows] == [("1", 0.5), ("2", 1.0)]
