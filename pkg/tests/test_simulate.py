import copy
import json

import numpy as np
import pytest

from helpers import repset_from
from stochplan.errors import MissingDelta
from stochplan.program import ModelFlags, build_stochastic
from stochplan.simulate import (
    KPIS,
    KPIReport,
    SimulationConfig,
    kpi_distributions,
    multi_year_drift,
    percentile,
    run_stream,
    sample_year,
    simulate,
    write_outputs,
)
from test_program import _storage_sample, _storage_system, _two_scenario_repset, solve


@pytest.fixture(scope="module")
def small_plan():
    rs = _two_scenario_repset()
    _, plan = solve(build_stochastic(_storage_system(), rs, _storage_sample()))
    return plan, rs


def _without_start_reserve(plan):
    """Copy of ``plan`` whose multi-year compartment starts empty."""
    adv = copy.deepcopy(plan)
    for st in adv.storage.values():
        if st["class"] == "long-term":
            st["x_size"] -= st["l0_mul"]
            st["sto_mul"] -= st["l0_mul"]
            st["l0_mul"] = 0.0
    return adv


# -- sampling ----------------------------------------------------------------------

def test_single_scenario_always_drawn():
    rng = run_stream(1, 0)
    probs = [np.array([1.0])] * 12
    for _ in range(50):
        assert sample_year(probs, rng).tolist() == [0] * 12


def test_empirical_frequency():
    rng = run_stream(5, 0)
    probs = [np.array([0.5, 0.5])]
    draws = np.array([sample_year(probs, rng)[0] for _ in range(100_000)])
    assert abs(draws.mean() - 0.5) <= 0.01


def test_fixed_seed_same_sequence():
    probs = [np.array([0.2, 0.3, 0.5])] * 4
    a = [sample_year(probs, run_stream(9, 3)).tobytes() for _ in range(3)]
    assert len(set(a)) == 1
    assert sample_year(probs, run_stream(9, 3)).tobytes() != b"" and \
        run_stream(9, 3).random() != run_stream(9, 4).random()


# -- random walk --------------------------------------------------------------------

def test_deterministic_plan_flat_multi_year(small_plan):
    sample = _storage_sample()
    rs = repset_from([[(2002, 1.0)], [(2002, 1.0)]], sample.years)
    _, plan = solve(build_stochastic(_storage_system(), rs, sample))
    report, traj = simulate(plan, rs, SimulationConfig(runs=5, years=20, seed=1))
    for t in traj:
        assert np.allclose(t.multi_year["cavern@r"], plan.storage["cavern@r"]["l0_mul"], atol=1e-9)
    assert report.events == []


def test_levels_replay_from_draws(small_plan):
    plan, rs = small_plan
    _, traj = simulate(plan, rs, SimulationConfig(runs=3, years=4, seed=11))
    st = plan.storage["cavern@r"]
    for t in traj:
        steps = [st["multi_year_delta"][p][t.scenarios[y, p]] for y in range(4) for p in range(2)]
        assert np.allclose(t.multi_year["cavern@r"].ravel(), st["l0_mul"] + np.cumsum(steps), atol=1e-12)


def test_seasonal_level_returns_each_year(small_plan):
    plan, rs = small_plan
    _, traj = simulate(plan, rs, SimulationConfig(runs=2, years=5, seed=2))
    l0_seas = plan.storage["cavern@r"]["l0_seas"]
    for t in traj:
        assert np.allclose(t.seasonal["cavern@r"][:, -1], l0_seas, atol=1e-9)


def test_no_violation_within_one_year(small_plan):
    # the robust reserve and leeway cover any single year of worst or best cases
    plan, rs = small_plan
    report, _ = simulate(plan, rs, SimulationConfig(runs=200, years=1, seed=4))
    assert report.depletions == 0 and report.spills == 0


def test_empty_start_reserve_is_detected(small_plan):
    plan, rs = small_plan
    report, _ = simulate(_without_start_reserve(plan), rs, SimulationConfig(runs=20, years=1, seed=4))
    assert report.depletions >= 1
    assert all(e.level < 0 for e in report.events if e.kind == "depletion")


def test_violations_recorded_not_clipped(small_plan):
    plan, rs = small_plan
    report, traj = simulate(plan, rs, SimulationConfig(runs=5, years=100, seed=8))
    size = plan.storage["cavern@r"]["x_size"]
    lows = sum(int((t.combined("cavern@r") < -1e-9 * size).sum()) for t in traj)
    highs = sum(int((t.combined("cavern@r") > size * (1 + 1e-9)).sum()) for t in traj)
    assert report.depletions == lows
    assert report.spills == highs


def test_missing_delta(small_plan):
    plan, rs = small_plan
    broken = copy.deepcopy(plan)
    del broken.storage["cavern@r"]["multi_year_delta"]
    with pytest.raises(MissingDelta):
        simulate(broken, rs, SimulationConfig(runs=1, years=1))
    broken = copy.deepcopy(plan)
    broken.storage["cavern@r"]["multi_year_delta"][0] = [1.0]
    with pytest.raises(MissingDelta):
        simulate(broken, rs, SimulationConfig(runs=1, years=1))


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(runs=0)
    with pytest.raises(ValueError):
        SimulationConfig(years=0)


def test_workers_and_replay_identical(small_plan, tmp_path):
    plan, rs = small_plan
    a = simulate(plan, rs, SimulationConfig(runs=12, years=10, seed=3))
    b = simulate(plan, rs, SimulationConfig(runs=12, years=10, seed=3, workers=4))
    write_outputs(*a, tmp_path / "a")
    write_outputs(*b, tmp_path / "b")
    for name in ("kpis.csv", "trajectories.csv", "events.csv", "simulation.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_output_shapes(small_plan, tmp_path):
    plan, rs = small_plan
    report, traj = simulate(plan, rs, SimulationConfig(runs=3, years=7, seed=3))
    write_outputs(report, traj, tmp_path)
    kpi_rows = (tmp_path / "kpis.csv").read_text().splitlines()
    assert kpi_rows[0] == "run,year,kpi,value"
    assert len(kpi_rows) == 1 + 3 * 7 * len(KPIS)
    traj_rows = (tmp_path / "trajectories.csv").read_text().splitlines()
    assert traj_rows[0] == "run,year,period,storage,region,level_seasonal,level_multiyear"
    assert len(traj_rows) == 1 + 3 * 7 * 2
    summary = json.loads((tmp_path / "simulation.json").read_text())
    assert set(summary["kpis"]) == set(KPIS)
    assert "eta_applied" in summary["metadata"]


def test_kpi_shares_in_unit_interval(small_plan):
    plan, rs = small_plan
    report, _ = simulate(plan, rs, SimulationConfig(runs=10, years=10, seed=3))
    for k in ("unserved_share", "curtailment_share", "thermal_share"):
        assert np.all((report.samples[k] >= 0) & (report.samples[k] <= 1))


# -- statistics ---------------------------------------------------------------------

def _report(values):
    return KPIReport({"x": np.asarray(values, dtype=float).reshape(1, -1)}, [], SimulationConfig(1, 1), [])


def test_constant_percentiles():
    stats = kpi_distributions(_report([3.5] * 40))["kpis"]["x"]
    assert stats == {"p5": 3.5, "p50": 3.5, "p95": 3.5, "mean": 3.5}


def test_uniform_median_rule():
    assert percentile(np.arange(100), 50) == 49.0
    stats = kpi_distributions(_report(np.arange(100)))["kpis"]["x"]
    assert stats["p50"] in (49.0, 50.0)
    assert stats["mean"] == 49.5


def test_empty_report_rejected():
    with pytest.raises(ValueError):
        kpi_distributions(KPIReport({"x": np.zeros((0, 0))}, [], SimulationConfig(1, 1), []))


# -- bundled toy --------------------------------------------------------------------

def test_toy_expected_drift(toy_monolith, toy_repset):
    _, _, plan = toy_monolith
    _, traj = simulate(plan, toy_repset, SimulationConfig(runs=200, years=100, seed=0))
    alpha = plan.info["alpha"]
    for name, st in plan.storage.items():
        if st["class"] != "long-term" or not st["multi_year"]:
            continue
        d = multi_year_drift(traj, name, st["l0_mul"])
        se = d.std(ddof=1) / np.sqrt(d.size)
        assert d.mean() >= alpha * st["l0"] - 3 * se


def test_toy_one_year_covered_and_empty_reserve_detected(toy_monolith, toy_repset):
    _, _, plan = toy_monolith
    report, _ = simulate(plan, toy_repset, SimulationConfig(runs=200, years=1, seed=0))
    assert report.depletions == 0 and report.spills == 0
    report, _ = simulate(_without_start_reserve(plan), toy_repset, SimulationConfig(runs=20, years=1, seed=0))
    assert report.depletions >= 1


def test_toy_curtailment_with_and_without_multi_year(toy_monolith, toy_monolith_single_year, toy_repset):
    _, _, with_multi = toy_monolith
    _, _, without = toy_monolith_single_year
    cfg = SimulationConfig(runs=200, years=100, seed=0)
    a, _ = simulate(with_multi, toy_repset, cfg)
    b, _ = simulate(without, toy_repset, cfg)
    assert a.samples["curtailment_share"].mean() <= b.samples["curtailment_share"].mean()
