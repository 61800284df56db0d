"""HiGHS backend (via ``highspy``) with hot-start support for repeated solves."""

from __future__ import annotations

import highspy
import numpy as np

from ..errors import SolverFailure
from .model import LPSolution, SparseLP, Status

_INF = highspy.kHighsInf

_STATUS = {
    highspy.HighsModelStatus.kOptimal: Status.OPTIMAL,
    highspy.HighsModelStatus.kInfeasible: Status.INFEASIBLE,
    highspy.HighsModelStatus.kUnbounded: Status.UNBOUNDED,
    highspy.HighsModelStatus.kUnboundedOrInfeasible: Status.INFEASIBLE,
    highspy.HighsModelStatus.kIterationLimit: Status.ITERATION_LIMIT,
    highspy.HighsModelStatus.kTimeLimit: Status.ITERATION_LIMIT,
}


def _clip_inf(a):
    a = np.asarray(a, dtype=float).copy()
    a[a >= 1e30] = _INF
    a[a <= -1e30] = -_INF
    a[np.isposinf(a)] = _INF
    a[np.isneginf(a)] = -_INF
    return a


class HighsSession:
    """A HiGHS instance holding one LP; bounds and rows may change between solves.

    Successive ``solve`` calls reuse the previous basis, which is what makes
    re-solving a sub-problem with a new right-hand side cheap.
    """

    def __init__(self, lp: SparseLP, tol: float = 1e-9, threads: int = 1, method: str = "simplex"):
        self.lp = lp
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("threads", threads)
        h.setOptionValue("primal_feasibility_tolerance", max(tol, 1e-10))
        h.setOptionValue("dual_feasibility_tolerance", max(tol, 1e-10))
        h.setOptionValue("solver", method)
        h.setOptionValue("presolve", "off" if method == "simplex" else "on")
        h.setOptionValue("random_seed", 0)
        model = highspy.HighsLp()
        m, n = lp.shape
        model.num_col_ = n
        model.num_row_ = m
        model.col_cost_ = np.asarray(lp.c, dtype=float)
        model.col_lower_ = _clip_inf(lp.lb)
        model.col_upper_ = _clip_inf(lp.ub)
        lo, hi = lp.row_bounds()
        model.row_lower_ = _clip_inf(lo)
        model.row_upper_ = _clip_inf(hi)
        model.offset_ = float(lp.obj_offset)
        A = lp.A.tocsc()
        model.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        model.a_matrix_.start_ = A.indptr.astype(np.int32)
        model.a_matrix_.index_ = A.indices.astype(np.int32)
        model.a_matrix_.value_ = A.data.astype(float)
        model.a_matrix_.num_col_ = n
        model.a_matrix_.num_row_ = m
        h.passModel(model)
        self.h = h
        self.num_rows = m
        self.num_cols = n

    def set_col_bounds(self, cols, lb, ub):
        cols = np.asarray(cols, dtype=np.int32)
        if cols.size == 0:
            return
        self.h.changeColsBounds(len(cols), cols, _clip_inf(lb), _clip_inf(ub))

    def set_row_bounds(self, rows, lo, hi):
        rows = np.asarray(rows, dtype=np.int32)
        if rows.size == 0:
            return
        self.h.changeRowsBounds(len(rows), rows, _clip_inf(lo), _clip_inf(hi))

    def add_rows(self, lo, hi, starts, index, values):
        self.h.addRows(len(lo), _clip_inf(lo), _clip_inf(hi), len(values),
                       np.asarray(starts, dtype=np.int32), np.asarray(index, dtype=np.int32),
                       np.asarray(values, dtype=float))
        self.num_rows += len(lo)

    def delete_rows(self, rows):
        rows = np.sort(np.asarray(rows, dtype=np.int32))
        if rows.size == 0:
            return
        self.h.deleteRows(len(rows), rows)
        self.num_rows -= len(rows)

    def solve(self) -> LPSolution:
        h = self.h
        h.run()
        ms = h.getModelStatus()
        status = _STATUS.get(ms)
        if status is None:
            raise SolverFailure(f"HiGHS returned {h.modelStatusToString(ms)}")
        info = h.getInfo()
        if status != Status.OPTIMAL:
            return LPSolution(status, iterations=int(info.simplex_iteration_count))
        sol = h.getSolution()
        x = np.asarray(sol.col_value, dtype=float)
        y = np.asarray(sol.row_dual, dtype=float)
        d = np.asarray(sol.col_dual, dtype=float)
        return LPSolution(Status.OPTIMAL, x=x, duals=y, reduced_costs=d,
                          objective=float(info.objective_function_value),
                          iterations=int(info.simplex_iteration_count))


def solve_highs(lp: SparseLP, tol: float = 1e-9, method: str = "simplex") -> LPSolution:
    sol = HighsSession(lp, tol=tol, method=method).solve()
    if sol.optimal:
        sol.reduced_costs = lp.c - lp.A.T @ sol.duals
    return sol
