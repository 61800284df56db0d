import itertools
import json

import numpy as np
import pytest

from stochplan.clustering import (
    DistanceTensor,
    Representative,
    RepresentativeSet,
    ResidualDemandIndex,
    clustering_error,
    compute_distances,
    compute_probabilities,
    count_combinations,
    load_sample,
    preselect_extremes,
    residual_index,
    select_representatives,
)
from stochplan.errors import EmptyAssignment, Infeasible, MissingCapacity, OddExtremeCount
from stochplan.system import load_system
from stochplan.toy import toy_sample_path, toy_system_path


def brute_force(D, n, extremes=()):
    """Exhaustive oracle: optimal cost and lexicographically smallest optimal selection."""
    I, _, P = D.shape
    ext = set(extremes)
    cells = [(i, p) for i in range(I) for p in range(P) if (i, p) not in ext]
    target = n - len(ext)
    periods = {p for (_, p) in cells}
    best = None
    for sel in itertools.combinations(cells, target) if 0 <= target <= len(cells) else []:
        if {p for (_, p) in sel} != periods:
            continue
        cost = 0.0
        for p in periods:
            reps = [i for (i, q) in sel if q == p]
            for j in range(I):
                if (j, p) not in ext:
                    cost += min(D[i, j, p] for i in reps)
        if best is None or cost < best[0] - 1e-9:
            best = (cost, sorted(sel))
        elif abs(cost - best[0]) <= 1e-9 and sorted(sel) < best[1]:
            best = (cost, sorted(sel))
    return best


def selection(rs, years):
    pos = {y: k for k, y in enumerate(years)}
    return sorted((pos[r.year], p) for p, reps in enumerate(rs.periods) for r in reps if not r.extreme)


def random_tensor(rng, I, P, C=2, integer=False):
    M = rng.integers(0, 4, size=(I, P, C)).astype(float) if integer else rng.normal(size=(I, P, C))
    return DistanceTensor.from_totals(M)


@pytest.fixture(scope="module")
def toy_sample():
    return load_sample(toy_sample_path())


@pytest.fixture(scope="module")
def toy_caps():
    return load_system(toy_system_path()).reference_capacity


def test_identical_series_zero_distance():
    M = np.array([[[1.0, 2.0]], [[1.0, 2.0]]])
    d = DistanceTensor.from_totals(M)
    assert np.all(d.d == 0)


def test_single_metric_difference():
    d = DistanceTensor.from_totals(np.array([[[10.0]], [[7.0]]]))
    assert d.d[0, 1, 0, 0] == 3.0
    assert d.d[1, 0, 0, 0] == 3.0


def test_distances_match_hand_recomputation(toy_sample, toy_caps):
    d = compute_distances(toy_sample, toy_caps)
    # recompute one cell directly from the raw series
    c = list(d.metrics).index("wind_cf")
    i, j, p = 0, 2, 5
    def total(y):
        return sum(toy_caps["wind"][r] * toy_sample.data[("wind_cf", r)][y, p].sum() for r in ("central", "north"))
    assert d.d[i, j, p, c] == pytest.approx(abs(total(i) - total(j)), rel=1e-12)
    assert np.allclose(d.d, d.d.transpose(1, 0, 2, 3))
    assert np.all(np.diagonal(d.d, axis1=0, axis2=1) == 0)


def test_three_year_sample_table():
    # M(i, p=0, c=0) = 1, 4, 6 -> hand table of |differences|
    d = DistanceTensor.from_totals(np.array([[[1.0]], [[4.0]], [[6.0]]]))
    expected = np.array([[0, 3, 5], [3, 0, 2], [5, 2, 0]], dtype=float)
    assert np.array_equal(d.d[:, :, 0, 0], expected)


def test_missing_capacity(toy_sample, toy_caps):
    caps = {k: v for k, v in toy_caps.items() if k != "wind"}
    with pytest.raises(MissingCapacity):
        compute_distances(toy_sample, caps)


def test_extremes_none():
    assert preselect_extremes({"A": 5}, 0) == []


def test_extremes_highest_then_lowest():
    assert preselect_extremes({"A": 5, "B": -2, "C": 9, "D": 0}, 2) == ["C", "B"]


def test_extremes_odd_count():
    with pytest.raises(OddExtremeCount):
        preselect_extremes({"A": 5, "B": 1}, 1)


def test_extremes_tie_break_earlier_period_then_year():
    idx = ResidualDemandIndex({(3, 1): 5.0, (1, 2): 5.0, (2, 1): 5.0, (0, 0): -1.0})
    assert preselect_extremes(idx, 2) == [(2, 1), (0, 0)]


def test_extremes_planted_winters_and_summers():
    rng = np.random.default_rng(0)
    values = {(i, p): float(rng.normal()) for i in range(35) for p in range(12)}
    winters = [(3, 0), (10, 1), (20, 11), (30, 0)]
    summers = [(4, 6), (11, 7), (21, 5), (31, 6)]
    for k, cell in enumerate(winters):
        values[cell] = -100.0 - k
    for k, cell in enumerate(summers):
        values[cell] = 100.0 + k
    got = preselect_extremes(ResidualDemandIndex(values), 8)
    assert set(got[:4]) == set(summers)
    assert set(got[4:]) == set(winters)


def test_two_years_two_reps_objective_zero():
    d = DistanceTensor.from_totals(np.array([[[0.0]], [[5.0]]]))
    rs = select_representatives(d, 2)
    assert rs.objective == 0.0
    assert [r.year for r in rs.periods[0]] == [0, 1]


def test_three_years_one_rep():
    raw = np.zeros((3, 3, 1, 1))
    for (i, j, v) in ((0, 1, 1.0), (0, 2, 1.0), (1, 2, 4.0)):
        raw[i, j, 0, 0] = raw[j, i, 0, 0] = v
    d = DistanceTensor(raw, (1, 2, 3), ("m",))
    rs = select_representatives(d, 1)
    assert [r.year for r in rs.periods[0]] == [1]
    assert rs.objective == 2.0
    err = clustering_error(rs, d)
    assert err["total"] == pytest.approx(2.0 / 3.0)


@pytest.mark.parametrize("seed", range(3))
def test_five_years_two_periods_match_enumeration(seed):
    rng = np.random.default_rng(seed)
    d = random_tensor(rng, 5, 2)
    D = d.d.sum(axis=3)
    rs = select_representatives(d, 4)
    cost, sel = brute_force(D, 4)
    assert rs.objective == pytest.approx(cost, abs=1e-9)
    assert selection(rs, d.years) == sel


def test_tie_break_prefers_earlier_years():
    # all months identical: every selection is optimal
    d = DistanceTensor.from_totals(np.zeros((4, 2, 1)))
    rs = select_representatives(d, 3)
    assert selection(rs, d.years) == [(0, 0), (0, 1), (1, 0)]


def test_extremes_excluded_and_self_representing():
    rng = np.random.default_rng(7)
    d = random_tensor(rng, 6, 2)
    extremes = [(2, 0), (4, 1)]
    rs = select_representatives(d, 5, extremes)
    cost, sel = brute_force(d.d.sum(axis=3), 5, extremes)
    assert rs.objective == pytest.approx(cost, abs=1e-9)
    assert selection(rs, d.years) == sel
    for p, reps in enumerate(rs.periods):
        for r in reps:
            if r.extreme:
                assert r.represents == (r.year,)
            else:
                assert all((y, p) not in extremes for y in r.represents)


def test_too_few_representatives_infeasible():
    d = DistanceTensor.from_totals(np.zeros((3, 4, 1)))
    with pytest.raises(Infeasible):
        select_representatives(d, 3)


def test_every_month_represented_exactly_once():
    rng = np.random.default_rng(11)
    d = random_tensor(rng, 6, 2)
    rs = select_representatives(d, 5, [(0, 1)])
    for p, reps in enumerate(rs.periods):
        covered = sorted(y for r in reps for y in r.represents)
        assert covered == list(d.years)


def test_probability_eighteen_of_thirty_five():
    reps = [Representative(1984, 0.0, False, tuple(range(18))),
            Representative(2001, 0.0, False, tuple(range(18, 35)))]
    rs = compute_probabilities(RepresentativeSet([reps], tuple(range(35))), 35)
    assert rs.periods[0][0].probability == pytest.approx(18 / 35, abs=1e-12)
    assert round(rs.periods[0][0].probability, 4) == 0.5143


def test_single_rep_probability_one():
    reps = [Representative(1, 0.0, False, (0, 1, 2))]
    rs = compute_probabilities(RepresentativeSet([reps], (0, 1, 2)), 3)
    assert rs.periods[0][0].probability == 1.0


def test_extreme_rescaling_by_hand():
    reps = [Representative(5, 0.0, True, (5,)),
            Representative(9, 0.0, False, tuple(y for y in range(35) if y != 5))]
    rs = compute_probabilities(RepresentativeSet([reps], tuple(range(35))), 35)
    ext, other = rs.periods[0]
    assert ext.probability == 1 / 35
    assert other.probability == pytest.approx(34 / 35, abs=1e-15)
    assert abs(ext.probability + other.probability - 1.0) <= 1e-12


def test_empty_assignment():
    with pytest.raises(EmptyAssignment):
        compute_probabilities(RepresentativeSet([[]], (0,)), 1)
    with pytest.raises(EmptyAssignment):
        compute_probabilities(RepresentativeSet([[Representative(0, 0.0, False, ())]], (0,)), 1)


def test_error_zero_when_all_selected():
    rng = np.random.default_rng(2)
    d = random_tensor(rng, 4, 2)
    rs = select_representatives(d, 8)
    assert clustering_error(rs, d)["total"] == 0.0


def test_error_monotone_in_n():
    rng = np.random.default_rng(5)
    d = random_tensor(rng, 6, 2)
    errs = [clustering_error(select_representatives(d, n), d)["total"] for n in range(2, 13)]
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_not_worse_than_greedy():
    rng = np.random.default_rng(9)
    d = random_tensor(rng, 6, 2, C=3)
    D = d.d.sum(axis=3)
    n = 5
    # greedy: add the cell giving the largest immediate cost reduction
    sel = [(int(np.argmin(D[:, :, p].sum(axis=1))), p) for p in range(2)]
    def cost(sel):
        return sum(min(D[i, j, p] for (i, q) in sel if q == p) for p in range(2) for j in range(6))
    while len(sel) < n:
        cands = [(i, p) for i in range(6) for p in range(2) if (i, p) not in sel]
        sel.append(min(cands, key=lambda c: cost(sel + [c])))
    rs = select_representatives(d, n)
    assert rs.objective <= cost(sel) + 1e-9


def test_probabilities_sum_to_one_on_toy(toy_sample, toy_caps):
    d = compute_distances(toy_sample, toy_caps)
    idx = residual_index(toy_sample, toy_caps)
    rs = select_representatives(d, 24, preselect_extremes(idx, 2))
    for p in range(rs.num_periods):
        assert abs(rs.probabilities(p).sum() - 1.0) <= 1e-9
    assert sum(rs.counts()) == 24


def test_combination_counts():
    assert count_combinations([2] * 4) == 16
    assert count_combinations([3] * 4) == 81
    assert count_combinations([4] * 4) == 256
    assert count_combinations([4] * 12) == 16_777_216
    assert count_combinations([5, 4, 3, 3, 3, 3, 2, 2, 2, 2, 2, 1]) == 51_840


def test_combination_count_exact_beyond_float():
    counts = [35] * 12
    assert count_combinations(counts) == 35 ** 12
    assert isinstance(count_combinations(counts), int)


def test_json_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    d = random_tensor(rng, 5, 2)
    rs = select_representatives(d, 4, [(1, 1)])
    rs.save(tmp_path / "r.json")
    again = RepresentativeSet.load(tmp_path / "r.json")
    assert again == rs
    raw = json.loads((tmp_path / "r.json").read_text())
    assert raw["periods"][0]["period"] == 1
    assert set(raw["periods"][0]["representatives"][0]) == {"year", "probability", "extreme", "represents"}
