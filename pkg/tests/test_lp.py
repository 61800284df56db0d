import itertools

import highspy
import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.csgraph import maximum_flow

from stochplan.errors import NodeLimit, SchemaViolation
from stochplan.lp import (
    SparseLP,
    Status,
    check_certificates,
    read_triplets,
    solve_lp,
    solve_mip,
    solve_simplex,
    write_mps,
    write_triplets,
)


def lp_of(c, A, senses, b, lb=None, ub=None, integrality=None):
    n = len(c)
    return SparseLP(c=c, A=sp.csc_matrix(np.atleast_2d(np.asarray(A, dtype=float))), senses=list(senses), b=b,
                    lb=np.zeros(n) if lb is None else lb, ub=np.full(n, np.inf) if ub is None else ub,
                    integrality=integrality)


def random_lp(rng, m, n, density=0.5):
    """Feasible, bounded LP built around a known interior point."""
    A = rng.uniform(-1, 1, (m, n)) * (rng.random((m, n)) < density)
    x0 = rng.uniform(0, 5, n)
    senses = rng.choice(["L", "E", "G"], m, p=[0.45, 0.1, 0.45])
    ax = A @ x0
    b = np.where(senses == "L", ax + rng.uniform(0, 1, m), np.where(senses == "G", ax - rng.uniform(0, 1, m), ax))
    return lp_of(rng.normal(size=n), A, senses, b, lb=np.zeros(n), ub=np.full(n, 10.0))


def scipy_objective(lp):
    A = lp.A.toarray()
    s = lp.senses
    A_ub = np.vstack([A[s == "L"], -A[s == "G"]])
    b_ub = np.concatenate([lp.b[s == "L"], -lp.b[s == "G"]])
    res = linprog(lp.c, A_ub=A_ub if len(b_ub) else None, b_ub=b_ub if len(b_ub) else None,
                  A_eq=A[s == "E"] if (s == "E").any() else None, b_eq=lp.b[s == "E"] if (s == "E").any() else None,
                  bounds=list(zip(lp.lb, lp.ub)), method="highs")
    assert res.status == 0
    return res.fun


# -- solve_lp -----------------------------------------------------------------------

def test_single_bound_row():
    sol = solve_lp(lp_of([1.0], [[1.0]], "G", [3.0]), backend="simplex")
    assert sol.status == Status.OPTIMAL
    assert sol.x[0] == pytest.approx(3.0)
    assert sol.duals[0] == pytest.approx(1.0)


def test_infeasible_pair():
    sol = solve_lp(lp_of([1.0], [[1.0], [1.0]], "LG", [1.0, 2.0]), backend="simplex")
    assert sol.status == Status.INFEASIBLE


def test_unbounded():
    sol = solve_lp(lp_of([-1.0, 0.0], [[0.0, 1.0]], "L", [1.0]), backend="simplex")
    assert sol.status == Status.UNBOUNDED


def test_iteration_limit():
    lp = random_lp(np.random.default_rng(0), 20, 20)
    assert solve_simplex(lp, max_iter=1).status == Status.ITERATION_LIMIT


def test_max_flow_five_nodes():
    # nodes 0 (source) .. 4 (sink)
    edges = [(0, 1, 4), (0, 2, 3), (1, 2, 2), (1, 3, 3), (2, 3, 1), (2, 4, 4), (3, 4, 5), (1, 4, 1)]
    n = len(edges)
    A = np.zeros((3, n))
    for k, (u, v, _) in enumerate(edges):
        if u in (1, 2, 3):
            A[u - 1, k] -= 1
        if v in (1, 2, 3):
            A[v - 1, k] += 1
    c = np.array([-1.0 if u == 0 else 0.0 for u, _, _ in edges])
    lp = lp_of(c, A, "EEE", np.zeros(3), ub=np.array([cap for *_, cap in edges], dtype=float))
    sol = solve_lp(lp, backend="simplex")
    graph = sp.lil_matrix((5, 5), dtype=np.int32)
    for u, v, cap in edges:
        graph[u, v] = cap
    expected = maximum_flow(graph.tocsr(), 0, 4).flow_value
    assert -sol.objective == pytest.approx(expected)
    assert check_certificates(lp, sol).ok()


def test_duals_are_objective_sensitivities():
    rng = np.random.default_rng(3)
    lp = random_lp(rng, 8, 10)
    sol = solve_lp(lp, backend="simplex")
    h = 1e-6
    for i in range(lp.num_rows):
        b = lp.b.copy()
        b[i] += h
        pert = SparseLP(lp.c, lp.A, lp.senses, b, lp.lb, lp.ub)
        fd = (solve_lp(pert, backend="simplex").objective - sol.objective) / h
        assert fd == pytest.approx(sol.duals[i], abs=1e-4)
    assert np.allclose(sol.reduced_costs, lp.c - lp.A.T @ sol.duals)


def test_continuous_only():
    lp = lp_of([1.0], [[1.0]], "G", [0.5], integrality=[True])
    with pytest.raises(SchemaViolation):
        solve_lp(lp)


def test_deterministic_bytes():
    lp = random_lp(np.random.default_rng(5), 30, 30)
    a, b = solve_lp(lp, backend="simplex"), solve_lp(lp, backend="simplex")
    assert a.x.tobytes() == b.x.tobytes() and a.duals.tobytes() == b.duals.tobytes()


@pytest.mark.parametrize("seed", range(40))
def test_random_lps_match_reference(seed):
    rng = np.random.default_rng(100 + seed)
    lp = random_lp(rng, int(rng.integers(2, 21)), int(rng.integers(2, 21)))
    sol = solve_lp(lp, backend="simplex")
    assert sol.status == Status.OPTIMAL
    ref = scipy_objective(lp)
    assert sol.objective == pytest.approx(ref, rel=1e-7, abs=1e-7)
    cert = check_certificates(lp, sol)
    assert cert.ok()
    assert cert.duality_gap <= 1e-7 * (1 + abs(sol.objective))


def test_highs_backend_agrees():
    lp = random_lp(np.random.default_rng(9), 15, 15)
    a, b = solve_lp(lp, backend="simplex"), solve_lp(lp, backend="highs")
    assert a.objective == pytest.approx(b.objective, rel=1e-9, abs=1e-9)
    assert check_certificates(lp, b).ok()


# -- certificates -------------------------------------------------------------------

def test_perturbed_primal_flagged():
    lp = random_lp(np.random.default_rng(2), 10, 10)
    sol = solve_lp(lp, backend="simplex")
    assert check_certificates(lp, sol).ok()
    moved = np.flatnonzero(np.abs(lp.A.toarray()).sum(axis=0) > 0)[0]
    sol.x = sol.x.copy()
    sol.x[moved] += 1e-3
    report = check_certificates(lp, sol)
    assert max(report.primal_residual, report.bound_residual, report.complementarity) > 0
    assert not report.ok(1e-6)


# -- branch-and-bound ---------------------------------------------------------------

def knapsack(values, weights, capacity):
    n = len(values)
    return lp_of(-np.asarray(values, float), [weights], "L", [capacity], ub=np.ones(n), integrality=np.ones(n, bool))


def test_knapsack_matches_enumeration():
    values, weights, cap = [10, 13, 7, 8], [5, 7, 4, 3], 11
    best = max(sum(v for v, pick in zip(values, s) if pick)
               for s in itertools.product([0, 1], repeat=4)
               if sum(w for w, pick in zip(weights, s) if pick) <= cap)
    sol = solve_mip(knapsack(values, weights, cap))
    assert -sol.objective == pytest.approx(best)
    assert set(np.round(sol.x).tolist()) <= {0.0, 1.0}


def test_integral_relaxation_no_branching():
    lp = lp_of([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]], "GG", [1.0, 2.0], ub=np.full(2, 5.0),
               integrality=[True, True])
    sol = solve_mip(lp)
    assert sol.nodes == 1
    assert sol.objective == pytest.approx(3.0)


def test_bound_monotone_and_node_limit():
    rng = np.random.default_rng(4)
    values, weights = rng.integers(5, 30, 12), rng.integers(3, 20, 12)
    lp = knapsack(values, weights, int(weights.sum() // 2))
    sol = solve_mip(lp)
    hist = sol.info["bound_history"]
    assert all(b >= a - 1e-9 for a, b in zip(hist, hist[1:]))
    assert sol.bound <= sol.objective + 1e-9
    assert all(b <= sol.objective + 1e-9 for b in hist)
    best = max(int(values @ np.array(s)) for s in itertools.product([0, 1], repeat=12)
               if weights @ np.array(s) <= weights.sum() // 2)
    assert -sol.objective == pytest.approx(best)
    with pytest.raises(NodeLimit):
        solve_mip(lp, node_limit=2)


def test_infeasible_mip():
    lp = lp_of([1.0], [[2.0]], "E", [1.0], ub=np.array([3.0]), integrality=[True])
    assert solve_mip(lp).status == Status.INFEASIBLE


# -- file formats -------------------------------------------------------------------

def test_triplet_round_trip(tmp_path):
    lp = random_lp(np.random.default_rng(6), 6, 7)
    write_triplets(lp, tmp_path, row_tags=[f"t{i}" for i in range(6)])
    back = read_triplets(tmp_path)
    assert np.array_equal(back.A.toarray(), lp.A.toarray())
    for name in ("c", "b", "lb", "ub", "senses"):
        assert np.array_equal(getattr(back, name), getattr(lp, name))


def test_mps_read_by_third_party(tmp_path):
    lp = random_lp(np.random.default_rng(8), 12, 9)
    lp.lb[0] = -np.inf
    path = tmp_path / "model.mps"
    write_mps(lp, path)
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.readModel(str(path))
    h.run()
    assert h.getInfo().objective_function_value == pytest.approx(solve_lp(lp, backend="simplex").objective,
                                                                 rel=1e-9, abs=1e-9)
