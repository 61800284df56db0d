"""End-to-end acceptance checks; each test prints one ``ACCEPTANCE <n>: PASS|FAIL`` line."""

import contextlib
import csv
import io
import itertools
from pathlib import Path

import numpy as np
import pytest

from helpers import contract, make_system
from stochplan.benders import BendersConfig, decompose, iterate, solve_sub
from stochplan.cli import main
from stochplan.clustering import (
    Representative,
    RepresentativeSet,
    compute_probabilities,
    count_combinations,
    select_representatives,
)
from stochplan.errors import Infeasible
from stochplan.lp import check_certificates, solve_lp
from stochplan.program import build_deterministic, extract_solution
from stochplan.simulate import SimulationConfig, simulate
from test_clustering import brute_force, random_tensor, selection
from test_lp import random_lp
from test_program import _storage_sample, _storage_system, _two_scenario_repset
from test_simulate import _without_start_reserve


@pytest.fixture
def verdict(capsys):
    """Yield a dict for the details; print the verdict line when the block ends."""

    @contextlib.contextmanager
    def check(number, title):
        details = {}
        ok = False
        try:
            yield details
            ok = True
        finally:
            text = ", ".join(f"{k}={v}" for k, v in details.items())
            with capsys.disabled():
                print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} {title} [{text}]")

    return check


# -- 1 ------------------------------------------------------------------------------

def test_benders_matches_extensive_form(verdict, toy_benders, toy_monolith):
    with verdict(1, "Benders vs extensive form on the toy") as d:
        plan, report, seconds = toy_benders
        _, sol, _ = toy_monolith
        d.update(gap=f"{report.gap:.4%}", ub=f"{report.upper_bound:.1f}", monolith=f"{sol.objective:.1f}",
                 seconds=f"{seconds:.1f}", iterations=report.iterations)
        rel = abs(report.upper_bound - sol.objective) / abs(sol.objective)
        d["ub_deviation"] = f"{rel:.4%}"
        assert report.status == "Converged"
        assert report.gap <= 0.005
        assert rel <= 0.005
        assert seconds <= 600


# -- 2 ------------------------------------------------------------------------------

def test_combination_arithmetic(verdict):
    with verdict(2, "combination counts") as d:
        cases = {"2x4": ([2] * 4, 16), "3x4": ([3] * 4, 81), "4x4": ([4] * 4, 256),
                 "4x12": ([4] * 12, 16_777_216), "per-month": ([5, 4, 3, 3, 3, 3, 2, 2, 2, 2, 2, 1], 51_840)}
        for name, (counts, expected) in cases.items():
            got = count_combinations(counts)
            d[name] = got
            assert isinstance(got, int) and got == expected


# -- 3 ------------------------------------------------------------------------------

def test_clustering_exactness(verdict):
    with verdict(3, "clustering vs exhaustive enumeration") as d:
        instances = 0
        for I, P in itertools.product(range(1, 7), range(1, 3)):
            for seed, integer in ((I * 10 + P, False), (I * 10 + P + 100, True)):
                t = random_tensor(np.random.default_rng(seed), I, P, integer=integer)
                D = t.d.sum(axis=3)
                for n in range(1, I * P + 1):
                    oracle = brute_force(D, n)
                    if oracle is None:
                        with pytest.raises(Infeasible):
                            select_representatives(t, n)
                        continue
                    rs = select_representatives(t, n)
                    assert rs.objective == pytest.approx(oracle[0], abs=1e-9)
                    assert selection(rs, t.years) == oracle[1]
                    for reps in rs.periods:
                        assert abs(sum(r.probability for r in reps) - 1.0) <= 1e-9
                    instances += 1
        d["instances"] = instances
        years = tuple(range(35))
        reps = [Representative(0, 0.0, False, tuple(range(18))), Representative(18, 0.0, False, tuple(range(18, 35)))]
        rho = compute_probabilities(RepresentativeSet([reps], years), 35).periods[0][0].probability
        d["rho_18_of_35"] = f"{rho:.4f}"
        assert abs(rho - 0.5143) <= 1e-4
        reps = [Representative(5, 0.0, True, (5,)), Representative(9, 0.0, False, tuple(y for y in years if y != 5))]
        ext, other = compute_probabilities(RepresentativeSet([reps], years), 35).periods[0]
        d["rho_extreme"] = f"{ext.probability!r}"
        assert ext.probability == 1 / 35
        assert abs(ext.probability + other.probability - 1.0) <= 1e-9


# -- 4 ------------------------------------------------------------------------------

def test_robust_storage_audit(verdict, toy_monolith, toy_repset):
    with verdict(4, "robust-storage audit, 200 runs x 100 years") as d:
        _, _, plan = toy_monolith
        d.update(alpha=plan.info["alpha"], beta=plan.info["beta"])
        assert plan.info["alpha"] == 0.01 and plan.info["beta"] == 1.0
        adversarial, _ = simulate(_without_start_reserve(plan), toy_repset, SimulationConfig(runs=20, years=1, seed=0))
        report, _ = simulate(plan, toy_repset, SimulationConfig(runs=200, years=100, seed=0))
        depletions, spills = report.depletions, report.spills
        d.update(depletions=depletions, spills=spills, adversarial_depletions=adversarial.depletions)
        first = min((e.year for e in report.events), default=None)
        d["first_event_year"] = first
        assert adversarial.depletions >= 1
        assert depletions == 0 and spills == 0


# -- 5 ------------------------------------------------------------------------------

def test_formulation_invariants(verdict, toy_system, toy_monolith, toy_monolith_single_year):
    with verdict(5, "formulation invariants on the toy") as d:
        art, sol, _ = toy_monolith_single_year
        long_term = [s for s in toy_system.storages if s.long_term]
        spread = 0.0
        for st in long_term:
            for region in st.regions:
                key = ("lvl", st.id, region)
                for p in range(toy_system.time.periods):
                    ends = [sol.x[bmap[key][-1]] for blk, bmap in zip(art.blocks, art.index.blocks)
                            if blk.p == p and key in bmap]
                    spread = max(spread, max(ends) - min(ends))
        d["level_spread"] = f"{spread:.2e}"
        assert spread <= 1e-7

        on, off = toy_monolith[1].objective, sol.objective
        regression = (on - off) / abs(off)
        d["multi_year_gain"] = f"{off - on:.1f}"
        assert regression <= 1e-6

        det = build_deterministic(toy_system)
        dsol = solve_lp(det.lp, backend="highs")
        flex = max(abs(v) for b in extract_solution(det, dsol).blocks for v in b["flex_imports"].values())
        d["deterministic_flex"] = f"{flex:.1e}"
        assert flex <= 1e-7


# -- 6 ------------------------------------------------------------------------------

def test_import_contract_price(verdict):
    with verdict(6, "average import price at full flexibility") as d:
        system = make_system(P=3, T=4, carriers=(("fuel", 1),), contracts=[contract(0.5, 50.0, 55.0)],
                             demand={"fuel": 1.5})
        art = build_deterministic(system)
        col = art.index.first_stage[("contract", "imp")]
        art.lp.lb[col] = art.lp.ub[col] = 1.0
        sol = solve_lp(art.lp, backend="highs")
        plan = extract_solution(art, sol)
        base = sum(b["base_imports"]["imp"] for b in plan.blocks)
        flex = sum(b["flex_imports"]["imp"] for b in plan.blocks)
        price = plan.cost_breakdown["imports"] / (base + flex)
        d.update(flex_share=f"{flex / base:.3f}", price=f"{price:.4f}")
        assert flex == pytest.approx(0.5 * base, rel=1e-9)
        assert abs(price - 51.7) <= 0.05


# -- 7 ------------------------------------------------------------------------------

def _cut_checks(top, subs, rng, per_cut=20, max_cuts=None):
    cuts = list(top.cuts)
    if max_cuts:
        cuts = cuts[:: max(1, len(cuts) // max_cuts)][:max_cuts]
    points = {}
    for cut in top.cuts:
        points.setdefault(cut.sub, []).append(cut.point)
    worst_tight = worst_valid = 0.0
    for cut in cuts:
        sub = subs[cut.sub]
        obj, _ = solve_sub(sub, cut.point)
        worst_tight = max(worst_tight, abs(obj - cut.evaluate(cut.point)) / max(1.0, abs(obj)))
        pts = np.array(points[cut.sub])
        for _ in range(per_cut):
            z = rng.dirichlet(np.ones(len(pts))) @ pts
            obj, _ = solve_sub(sub, z)
            worst_valid = max(worst_valid, (cut.evaluate(z) - obj) / max(1.0, abs(obj)))
    return len(cuts), worst_tight, worst_valid


def test_lp_certificates_and_cuts(verdict, toy_system, toy_sample, toy_repset):
    with verdict(7, "LP certificates and Benders cuts") as d:
        rng = np.random.default_rng(2024)
        worst_gap = worst_cs = 0.0
        for _ in range(500):
            m, n = int(rng.integers(1, 51)), int(rng.integers(1, 51))
            lp = random_lp(rng, m, n)
            sol = solve_lp(lp, backend="simplex")
            assert sol.optimal
            cert = check_certificates(lp, sol)
            worst_gap = max(worst_gap, cert.duality_gap / (1 + abs(sol.objective)))
            worst_cs = max(worst_cs, cert.complementarity)
        d.update(lps=500, max_rel_gap=f"{worst_gap:.1e}", max_cs=f"{worst_cs:.1e}")
        assert worst_gap <= 1e-7 and worst_cs <= 1e-6

        top, subs = decompose(_storage_system(dirty=True, cap=1.0), _two_scenario_repset(), _storage_sample())
        iterate(top, subs, 0.0, 8, BendersConfig(stabilization=False, stall_window=1000))
        small = _cut_checks(top, subs, rng)
        top, subs = decompose(toy_system, toy_repset, toy_sample)
        iterate(top, subs, 0.0, 4, BendersConfig(stall_window=1000))
        toy = _cut_checks(top, subs, rng, max_cuts=6)
        d.update(cuts=small[0] + toy[0], max_tightness=f"{max(small[1], toy[1]):.1e}",
                 max_violation=f"{max(small[2], toy[2]):.1e}")
        assert max(small[1], toy[1]) <= 1e-6
        assert max(small[2], toy[2]) <= 1e-6


# -- 8 ------------------------------------------------------------------------------

def _without_seconds(path: Path) -> bytes:
    rows = list(csv.reader(io.StringIO(path.read_text())))
    drop = rows[0].index("seconds")
    return "\n".join(",".join(r[:drop] + r[drop + 1:]) for r in rows).encode()


def test_pipeline_reproducible(verdict, tmp_path):
    with verdict(8, "two full pipeline runs byte-identical") as d:
        runs = []
        for name in ("a", "b"):
            root = tmp_path / name
            root.mkdir()
            cfg = root / "run.toml"
            cfg.write_text('seed = 42\n[paths]\nout = "out"\n[cluster]\nn = 24\n'
                           '[simulate]\nruns = 200\nyears = 100\n')
            for command in ("cluster", "solve", "simulate", "report"):
                assert main([command, "--config", str(cfg)]) == 0
            runs.append(root / "out")
        files = sorted(p.name for p in runs[0].iterdir() if p.suffix in (".json", ".csv"))
        assert files == sorted(p.name for p in runs[1].iterdir() if p.suffix in (".json", ".csv"))
        differing = []
        for f in files:
            a, b = runs[0] / f, runs[1] / f
            if f == "convergence.csv":
                same = _without_seconds(a) == _without_seconds(b)
            else:
                same = a.read_bytes() == b.read_bytes()
            if not same:
                differing.append(f)
        d.update(files=len(files), differing=differing or "none")
        assert not differing
