import time

import pytest

from stochplan.benders import BendersConfig, decompose, iterate
from stochplan.clustering import compute_distances, load_sample, select_representatives
from stochplan.lp import solve_lp
from stochplan.program import ModelFlags, build_stochastic, extract_solution
from stochplan.system import load_system
from stochplan.toy import toy_sample_path, toy_system_path

TOY_REPRESENTATIVES = 24


@pytest.fixture(scope="session")
def toy_system():
    return load_system(toy_system_path())


@pytest.fixture(scope="session")
def toy_sample():
    return load_sample(toy_sample_path())


@pytest.fixture(scope="session")
def toy_repset(toy_system, toy_sample):
    d = compute_distances(toy_sample, toy_system.reference_capacity)
    return select_representatives(d, TOY_REPRESENTATIVES)


@pytest.fixture(scope="session")
def toy_monolith(toy_system, toy_sample, toy_repset):
    art = build_stochastic(toy_system, toy_repset, toy_sample)
    sol = solve_lp(art.lp, backend="highs")
    return art, sol, extract_solution(art, sol)


def _benders(system, sample, repset, stabilization):
    t0 = time.perf_counter()
    top, subs = decompose(system, repset, sample)
    plan, report = iterate(top, subs, 0.005, 500, BendersConfig(stabilization=stabilization))
    return plan, report, time.perf_counter() - t0


@pytest.fixture(scope="session")
def toy_benders(toy_system, toy_sample, toy_repset):
    return _benders(toy_system, toy_sample, toy_repset, True)


@pytest.fixture(scope="session")
def toy_benders_plain(toy_system, toy_sample, toy_repset):
    return _benders(toy_system, toy_sample, toy_repset, False)


@pytest.fixture(scope="session")
def toy_monolith_single_year(toy_system, toy_sample, toy_repset):
    art = build_stochastic(toy_system, toy_repset, toy_sample, ModelFlags(multi_year=False))
    sol = solve_lp(art.lp, backend="highs")
    return art, sol, extract_solution(art, sol)
