import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskrestore.uncertainty import (
    RepairMode,
    RepairModeTable,
    ScenarioError,
    ScenarioSet,
    expected_scenario,
    load_scenarios,
    mttr,
    sample_repair_times,
    sample_scenarios,
)

LINES = [(1, 5), (3, 4)]


def test_mttr_exponential_case():
    assert mttr(3, 1) == 3.0


@pytest.mark.parametrize("scale,shape", [(1, 2), (3, 2), (2.5, 1.3)])
def test_mttr_against_independent_gamma(scale, shape):
    # mpmath evaluates the gamma function independently of math.gamma
    ref = float(scale * mpmath.gamma(1 + mpmath.mpf(1) / shape))
    assert mttr(scale, shape) == pytest.approx(ref, abs=1e-12)


def test_mttr_known_values():
    assert mttr(1, 2) == pytest.approx(0.886227, abs=1e-6)
    assert mttr(3, 2) == pytest.approx(2.658681, abs=1e-6)


@pytest.mark.parametrize("scale,shape", [(0, 2), (1, 0), (-1, 1)])
def test_mttr_rejects_non_positive(scale, shape):
    with pytest.raises(ValueError):
        mttr(scale, shape)


def test_monte_carlo_mean_matches_mttr():
    draws = sample_repair_times(3.0, 2.0, 100_000, seed=11)
    assert abs(draws.mean() / mttr(3, 2) - 1) < 0.01


def test_table_rejects_non_diminishing_modes():
    with pytest.raises(ScenarioError, match="strictly smaller scale"):
        RepairModeTable({(1, 2): [RepairMode(5, 1.0), RepairMode(10, 2.0)]})


def test_table_rejects_bad_parameters():
    with pytest.raises(ScenarioError):
        RepairModeTable.default(LINES, shape=0)
    with pytest.raises(ScenarioError):
        RepairModeTable.default(LINES, sigma=-1)
    with pytest.raises(ScenarioError):
        RepairModeTable.default(LINES, saturation=(0.0, 5.0))


def test_zero_variance_limit():
    table = RepairModeTable.default(LINES, mu_rs=(5.0, 10.0), scales=(2.5, 0.5), shape=1e6, sigma=0.0)
    sc = sample_scenarios(table, 7, 6, 30.0, seed=3)
    for s in sc:
        for (line, r), t in s.trepair.items():
            assert t == math.ceil(table.mode(line, r).scale)
            assert s.rs[(line, r)] == table.mode(line, r).mu_rs


def test_same_seed_same_bytes():
    table = RepairModeTable.default(LINES)
    a = sample_scenarios(table, 5, 4, 16.0, seed=7).dumps()
    b = sample_scenarios(table, 5, 4, 16.0, seed=7).dumps()
    c = sample_scenarios(table, 5, 4, 16.0, seed=8).dumps()
    assert a == b and a != c


def test_scenario_file_round_trip(tmp_path):
    sc = sample_scenarios(RepairModeTable.default(LINES), 4, 5, [10, 12, 12, 14, 16], seed=1)
    sc.save(tmp_path / "s.json")
    back = load_scenarios(tmp_path / "s.json")
    assert back.dumps() == sc.dumps()
    assert back[0].budget_at(2) == 12.0


def test_probabilities_sum_to_one_exactly():
    sc = sample_scenarios(RepairModeTable.default(LINES), 7, 4, seed=0)
    assert math.fsum(sc.probabilities) == 1.0


def test_sampling_validation():
    table = RepairModeTable.default(LINES)
    with pytest.raises(ScenarioError):
        sample_scenarios(table, 0, 4)
    with pytest.raises(ScenarioError):
        sample_scenarios(table, 2, 4, budget=[1.0, 2.0])


def test_mismatched_key_sets_rejected():
    sc = sample_scenarios(RepairModeTable.default(LINES), 2, 4, seed=0)
    bad = sc.scenarios[1]
    del bad.trepair[next(iter(bad.trepair))]
    with pytest.raises(ScenarioError, match="key set"):
        ScenarioSet(sc.scenarios, 0, 4)


def test_expected_scenario():
    table = RepairModeTable({(1, 2): [RepairMode(5.0, 3.0), RepairMode(10.0, 1.0)]}, shape=1.0)
    ev = expected_scenario(table, 10)
    assert ev.trepair[((1, 2), 1)] == 3  # exponential mean is exactly 3
    table2 = RepairModeTable.default(LINES, shape=2.0)
    ev2 = expected_scenario(table2, 10)
    assert ev2.trepair[((1, 5), 2)] == 1  # ceil(0.886227)
    assert ev2.trepair[((1, 5), 1)] == 3  # ceil(2.658681)
    assert all(ev2.rs[k] == table2.mode(*k).mu_rs for k in table2.keys())
    assert ev2.probability == 1.0


modes = st.lists(
    st.tuples(st.floats(1.0, 6.0), st.floats(0.3, 5.0)), min_size=1, max_size=3
).map(lambda ms: sorted({round(m, 2) for m, _ in ms})).filter(bool)


@settings(max_examples=40, deadline=None)
@given(
    mus=modes,
    top=st.floats(1.0, 6.0),
    shape=st.floats(0.5, 4.0),
    sigma=st.floats(0.0, 3.0),
    horizon=st.integers(1, 8),
    seed=st.integers(0, 2**31 - 1),
)
def test_clamps_and_diminishing_returns(mus, top, shape, sigma, horizon, seed):
    scales = [top / (k + 1) for k in range(len(mus))]
    table = RepairModeTable({(1, 2): [RepairMode(m, s) for m, s in zip(mus, scales)]}, shape=shape, sigma=sigma,
                            saturation=(1.0, 4.0))
    sc = sample_scenarios(table, 5, horizon, 10.0, seed)
    for s in sc:
        assert all(1 <= t <= horizon for t in s.trepair.values())
        assert all(1.0 <= v <= 4.0 for v in s.rs.values())
    ev = expected_scenario(table, horizon)
    seq = [ev.trepair[((1, 2), r)] for r in range(1, len(mus) + 1)]
    assert all(b <= a for a, b in zip(seq, seq[1:]))


def test_sampler_uses_inverse_cdf_stream():
    # the first uniform of seed 5 maps to the first trepair draw
    table = RepairModeTable({(1, 2): [RepairMode(5.0, 2.0)]}, shape=2.0, sigma=0.0)
    u = np.random.default_rng(5).random((1, 2))
    draw = 2.0 * (-math.log1p(-u[0, 0])) ** 0.5
    sc = sample_scenarios(table, 1, 50, seed=5)
    assert sc[0].trepair[((1, 2), 1)] == max(1, math.ceil(draw))
