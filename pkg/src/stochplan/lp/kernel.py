"""Public solve entry points: LP, branch-and-bound MIP, optimality certificates."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..errors import NodeLimit, SchemaViolation
from .highs import solve_highs
from .model import LPSolution, SparseLP, Status
from .simplex import solve_simplex

logger = logging.getLogger(__name__)

# above this many matrix cells the dense-inverse simplex is too slow
AUTO_SIMPLEX_LIMIT = 100_000


def solve_lp(lp: SparseLP, tol: float = 1e-9, backend: str = "auto") -> LPSolution:
    """Solve a continuous LP.

    ``backend`` is ``"simplex"`` (built-in revised simplex), ``"highs"`` or
    ``"auto"`` (built-in for small problems, HiGHS otherwise).
    """
    if lp.integrality.any():
        raise SchemaViolation("integrality", "solve_lp requires a continuous LP; use solve_mip")
    if backend == "auto":
        m, n = lp.shape
        backend = "simplex" if m * (n + m) <= AUTO_SIMPLEX_LIMIT else "highs"
    if backend == "simplex":
        return solve_simplex(lp, tol=tol)
    if backend == "highs":
        return solve_highs(lp, tol=tol)
    raise ValueError(f"unknown backend {backend!r}")


def solve_mip(lp: SparseLP, gap: float = 0.0, node_limit: int = 100_000,
              tol: float = 1e-9, int_tol: float = 1e-6, backend: str = "auto") -> LPSolution:
    """Best-first branch-and-bound over the integer columns of ``lp``.

    Branches on the lowest-index fractional column, down-branch first. The
    returned solution carries the proven lower bound in ``bound`` and the
    history of global lower bounds in ``info["bound_history"]``.
    """
    relaxed = lp.relaxation()
    int_cols = np.flatnonzero(lp.integrality)
    lb0 = lp.lb.copy()
    ub0 = lp.ub.copy()
    lb0[int_cols] = np.ceil(lb0[int_cols] - int_tol)
    ub0[int_cols] = np.floor(ub0[int_cols] + int_tol)

    counter = 0
    heap = []
    incumbent = None
    inc_obj = math.inf
    history = []
    nodes = 0

    def solve_node(lb, ub):
        return solve_lp(relaxed.with_bounds(lb, ub), tol=tol, backend=backend)

    root = solve_node(lb0, ub0)
    nodes += 1
    if root.status == Status.UNBOUNDED:
        return LPSolution(Status.UNBOUNDED, nodes=nodes)
    if not root.optimal:
        return LPSolution(root.status, nodes=nodes)
    heapq.heappush(heap, (root.objective, counter, lb0, ub0, root))
    counter += 1
    global_lb = root.objective

    def closed(bound):
        if incumbent is None:
            return False
        return inc_obj - bound <= gap * max(abs(inc_obj), 1e-10) + 1e-9 * max(1.0, abs(inc_obj))

    while heap:
        bound, _, lb, ub, sol = heapq.heappop(heap)
        # open nodes bound the optimum from below; so does the incumbent itself
        global_lb = max(global_lb, min([bound, inc_obj] + [h[0] for h in heap]))
        history.append(global_lb)
        if closed(bound):
            continue
        xi = sol.x[int_cols]
        frac = np.abs(xi - np.round(xi))
        fractional = np.flatnonzero(frac > int_tol)
        if fractional.size == 0:
            if sol.objective < inc_obj:
                incumbent = sol
                inc_obj = sol.objective
            continue
        j = int(int_cols[fractional[0]])
        v = sol.x[j]
        for child_lb, child_ub in (
            (lb, np.where(np.arange(len(ub)) == j, math.floor(v), ub)),
            (np.where(np.arange(len(lb)) == j, math.ceil(v), lb), ub),
        ):
            if nodes >= node_limit:
                raise NodeLimit(f"node limit {node_limit} reached")
            child = solve_node(child_lb, child_ub)
            nodes += 1
            if not child.optimal:
                continue
            if closed(child.objective):
                continue
            heapq.heappush(heap, (child.objective, counter, child_lb, child_ub, child))
            counter += 1

    if incumbent is None:
        return LPSolution(Status.INFEASIBLE, nodes=nodes, info={"bound_history": history})
    x = incumbent.x.copy()
    x[int_cols] = np.round(x[int_cols])
    final_bound = inc_obj if not heap else min(h[0] for h in heap)
    history.append(max(global_lb, min(final_bound, inc_obj)))
    return LPSolution(Status.OPTIMAL, x=x, duals=incumbent.duals, reduced_costs=incumbent.reduced_costs,
                      objective=float(lp.c @ x) + lp.obj_offset, iterations=incumbent.iterations,
                      bound=history[-1], nodes=nodes, info={"bound_history": history})


@dataclass
class CertificateReport:
    primal_residual: float
    bound_residual: float
    dual_residual: float
    complementarity: float
    duality_gap: float
    primal_objective: float
    dual_objective: float

    def ok(self, tol: float = 1e-6) -> bool:
        scale = 1.0 + abs(self.primal_objective)
        return (self.primal_residual <= tol and self.bound_residual <= tol and self.dual_residual <= tol
                and self.complementarity <= tol and self.duality_gap <= tol * scale)


def check_certificates(lp: SparseLP, sol: LPSolution) -> CertificateReport:
    """Max-norm primal/dual feasibility, complementary slackness and duality gap."""
    x, y = sol.x, sol.duals
    d = lp.c - lp.A.T @ y
    ax = lp.A @ x
    slack = lp.b - ax
    s = lp.senses
    viol = np.where(s == "L", np.maximum(-slack, 0), np.where(s == "G", np.maximum(slack, 0), np.abs(slack)))
    primal = float(viol.max(initial=0.0))
    bnd = float(np.maximum(np.maximum(lp.lb - x, 0), np.maximum(x - lp.ub, 0)).max(initial=0.0))
    ysign = np.where(s == "L", np.maximum(y, 0), np.where(s == "G", np.maximum(-y, 0), 0.0))
    fin_lb = np.isfinite(lp.lb)
    fin_ub = np.isfinite(lp.ub)
    dsign = np.maximum(np.where(fin_lb, 0.0, np.maximum(d, 0)), np.where(fin_ub, 0.0, np.maximum(-d, 0)))
    dual = float(max(ysign.max(initial=0.0), dsign.max(initial=0.0)))
    cs_rows = np.where(s == "E", 0.0, np.abs(y * slack))
    dpos = np.maximum(d, 0)
    dneg = np.maximum(-d, 0)
    gap_lb = np.where(fin_lb, x - np.where(fin_lb, lp.lb, 0), 0.0)
    gap_ub = np.where(fin_ub, np.where(fin_ub, lp.ub, 0) - x, 0.0)
    cs_cols = np.abs(dpos * gap_lb) + np.abs(dneg * gap_ub)
    comp = float(max(cs_rows.max(initial=0.0), cs_cols.max(initial=0.0)))
    pobj = float(lp.c @ x) + lp.obj_offset
    dobj = float(lp.b @ y + np.sum(np.where(fin_lb, dpos * np.where(fin_lb, lp.lb, 0), 0.0))
                 - np.sum(np.where(fin_ub, dneg * np.where(fin_ub, lp.ub, 0), 0.0))) + lp.obj_offset
    return CertificateReport(primal, bnd, dual, comp, abs(pobj - dobj), pobj, dobj)
