"""Two-phase bounded-variable revised simplex with explicit basis inverse.

Intended for small and medium LPs (up to a few thousand rows). The basis
inverse is kept dense and updated in product form; it is recomputed from
scratch every ``refactor_every`` pivots.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

from ..errors import NumericalBreakdown
from .model import LPSolution, SparseLP, Status

logger = logging.getLogger(__name__)

_PIVOT_TOL = 1e-9


def _pow2(v):
    return np.exp2(np.round(np.log2(v)))


def geometric_scaling(A: sp.csc_matrix, passes: int = 4):
    """Row and column factors (powers of two) equilibrating |A| geometrically."""
    m, n = A.shape
    r = np.ones(m)
    s = np.ones(n)
    if A.nnz == 0:
        return r, s
    absA = abs(A).tocoo()
    keep = absA.data > 0
    rows, cols, vals = absA.row[keep], absA.col[keep], absA.data[keep]
    for _ in range(passes):
        v = vals * r[rows] * s[cols]
        rmax = np.zeros(m)
        np.maximum.at(rmax, rows, v)
        rmin = np.full(m, np.inf)
        np.minimum.at(rmin, rows, v)
        ok = rmax > 0
        r[ok] = r[ok] / np.sqrt(rmax[ok] * rmin[ok])
        v = vals * r[rows] * s[cols]
        cmax = np.zeros(n)
        np.maximum.at(cmax, cols, v)
        cmin = np.full(n, np.inf)
        np.minimum.at(cmin, cols, v)
        ok = cmax > 0
        s[ok] = s[ok] / np.sqrt(cmax[ok] * cmin[ok])
    return _pow2(r), _pow2(s)


class _Simplex:
    def __init__(self, A, b, c, lb, ub, senses, tol, refactor_every, bland_after, max_iter):
        m, n = A.shape
        self.m, self.n = m, n
        self.tol = tol
        self.refactor_every = refactor_every
        self.bland_after = bland_after
        self.max_iter = max_iter
        self.b = b
        slack_lb = np.where(senses == "G", -np.inf, 0.0)
        slack_ub = np.where(senses == "L", np.inf, 0.0)

        x = np.zeros(n)
        x[:] = np.where(np.isfinite(lb), lb, np.where(np.isfinite(ub), ub, 0.0))
        resid = b - A @ x
        # slack absorbs the residual where its bounds allow, otherwise an artificial does
        need_art = (resid < slack_lb - tol) | (resid > slack_ub + tol)
        art_rows = np.flatnonzero(need_art)
        sigma = np.where(resid[art_rows] >= 0, 1.0, -1.0)
        k = len(art_rows)
        self.k = k
        art = sp.csc_matrix((sigma, (art_rows, np.arange(k))), shape=(m, k))
        self.K = sp.hstack([A, sp.identity(m, format="csc"), art], format="csc")
        self.KT = self.K.T.tocsr()
        N = n + m + k
        self.N = N
        self.lb = np.concatenate([lb, slack_lb, np.zeros(k)])
        self.ub = np.concatenate([ub, slack_ub, np.full(k, np.inf)])
        self.x = np.concatenate([x, np.zeros(m), np.zeros(k)])
        self.basis = np.arange(n, n + m)
        self.basis[art_rows] = n + m + np.arange(k)
        self.is_basic = np.zeros(N, dtype=bool)
        self.is_basic[self.basis] = True
        self.cost2 = np.concatenate([c, np.zeros(m + k)])
        self.iterations = 0
        self._refactor()

    # -- linear algebra -------------------------------------------------
    def _refactor(self):
        B = self.K[:, self.basis].toarray()
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown("singular basis") from exc
        if not np.all(np.isfinite(self.Binv)):
            raise NumericalBreakdown("non-finite basis inverse")
        nonbasic = ~self.is_basic
        rhs = self.b - self.K[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.Binv @ rhs
        self._since_refactor = 0

    def _column(self, j):
        start, end = self.K.indptr[j], self.K.indptr[j + 1]
        idx = self.K.indices[start:end]
        return self.Binv[:, idx] @ self.K.data[start:end]

    # -- main loop --------------------------------------------------------
    def run(self, cost):
        tol = self.tol
        degenerate = 0
        bland = False
        while True:
            if self.iterations >= self.max_iter:
                return Status.ITERATION_LIMIT
            y = cost[self.basis] @ self.Binv
            d = cost - self.KT @ y
            movable = (~self.is_basic) & (self.ub > self.lb)
            can_up = movable & (self.x < self.ub - tol)
            can_dn = movable & (self.x > self.lb + tol)
            score = np.where(can_up & (d < -tol), -d, 0.0)
            score = np.maximum(score, np.where(can_dn & (d > tol), d, 0.0))
            cand = np.flatnonzero(score > 0)
            if cand.size == 0:
                self.y = y
                return Status.OPTIMAL
            j = int(cand[0]) if bland else int(np.argmax(score))
            direction = 1.0 if d[j] < 0 else -1.0
            alpha = self._column(j)
            g = -direction * alpha
            xb = self.x[self.basis]
            lbb = self.lb[self.basis]
            ubb = self.ub[self.basis]
            dec = g < -_PIVOT_TOL
            inc = g > _PIVOT_TOL
            ratio = np.full(self.m, np.inf)
            ratio[dec] = (xb[dec] - lbb[dec]) / -g[dec]
            ratio[inc] = (ubb[inc] - xb[inc]) / g[inc]
            ratio = np.maximum(ratio, 0.0)
            flip = self.ub[j] - self.lb[j]
            r = -1
            if np.isfinite(ratio).any():
                if bland:
                    theta = ratio.min()
                    ties = np.flatnonzero(ratio <= theta + 1e-12)
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    relaxed = np.full(self.m, np.inf)
                    relaxed[dec] = (xb[dec] - lbb[dec] + tol) / -g[dec]
                    relaxed[inc] = (ubb[inc] - xb[inc] + tol) / g[inc]
                    tmax = relaxed.min()
                    elig = np.flatnonzero(ratio <= tmax)
                    r = int(elig[np.argmax(np.abs(alpha[elig]))])
                theta = ratio[r]
            else:
                theta = np.inf
            if flip <= theta:
                if not np.isfinite(flip):
                    return Status.UNBOUNDED
                theta = flip
                r = -1
            self.iterations += 1
            if theta <= 1e-12:
                degenerate += 1
                if degenerate >= self.bland_after and not bland:
                    logger.debug("switching to Bland's rule after %d degenerate pivots", degenerate)
                    bland = True
            else:
                degenerate = 0
            self.x[self.basis] = xb + theta * g
            self.x[j] += direction * theta
            if r < 0:
                # bound flip, no basis change
                self.x[j] = self.ub[j] if direction > 0 else self.lb[j]
                continue
            leaving = self.basis[r]
            self.x[leaving] = self.lb[leaving] if g[r] < 0 else self.ub[leaving]
            self.basis[r] = j
            self.is_basic[leaving] = False
            self.is_basic[j] = True
            piv = alpha[r]
            if abs(piv) < 1e-12:
                self._refactor()
                continue
            prow = self.Binv[r] / piv
            self.Binv -= np.outer(alpha, prow)
            self.Binv[r] = prow
            self._since_refactor += 1
            if self._since_refactor >= self.refactor_every:
                self._refactor()


def solve_simplex(lp: SparseLP, tol: float = 1e-9, max_iter: int | None = None,
                  refactor_every: int = 100, bland_after: int = 1000,
                  scale: bool = True) -> LPSolution:
    """Solve ``lp`` (integrality ignored) with the revised simplex method."""
    m, n = lp.shape
    A = lp.A
    # empty rows: either trivially satisfied or infeasible
    row_nnz = np.diff(A.tocsr().indptr)
    empty_rows = row_nnz == 0
    if empty_rows.any():
        bb = lp.b[empty_rows]
        ss = lp.senses[empty_rows]
        bad = ((ss == "L") & (bb < -tol)) | ((ss == "G") & (bb > tol)) | ((ss == "E") & (np.abs(bb) > tol))
        if bad.any():
            return LPSolution(Status.INFEASIBLE, message="empty infeasible row")
    if np.any(lp.lb > lp.ub + tol):
        return LPSolution(Status.INFEASIBLE, message="crossed bounds")
    keep_rows = np.flatnonzero(~empty_rows)
    A = A[keep_rows, :]
    b = lp.b[keep_rows]
    senses = lp.senses[keep_rows]

    if scale:
        r, s = geometric_scaling(A)
    else:
        r, s = np.ones(A.shape[0]), np.ones(n)
    As = sp.diags(r) @ A @ sp.diags(s)
    As = sp.csc_matrix(As)
    bs = r * b
    cs = s * lp.c
    lbs = lp.lb / s
    ubs = lp.ub / s
    if max_iter is None:
        max_iter = 50 * (m + n) + 10000

    sx = _Simplex(As, bs, cs, lbs, ubs, senses, tol, refactor_every, bland_after, max_iter)
    if sx.k:
        cost1 = np.zeros(sx.N)
        cost1[n + len(b):] = 1.0
        status = sx.run(cost1)
        if status == Status.ITERATION_LIMIT:
            return LPSolution(status, iterations=sx.iterations)
        infeas = sx.x[n + len(b):].sum()
        if infeas > tol * max(1.0, np.abs(bs).max(initial=0.0)) * 10:
            return LPSolution(Status.INFEASIBLE, iterations=sx.iterations,
                              message=f"phase-1 infeasibility {infeas:.3g}")
        sx.ub[n + len(b):] = 0.0
        sx.lb[n + len(b):] = 0.0
        nb = ~sx.is_basic
        sx.x[n + len(b):][nb[n + len(b):]] = 0.0
        sx._refactor()
    status = sx.run(sx.cost2)
    if status != Status.OPTIMAL:
        return LPSolution(status, iterations=sx.iterations)
    x = sx.x[:n] * s
    y_kept = sx.y * r
    y = np.zeros(m)
    y[keep_rows] = y_kept
    d = lp.c - lp.A.T @ y
    basis = (sx.basis.copy(), sx.is_basic[:n].copy())
    return LPSolution(Status.OPTIMAL, x=x, duals=y, reduced_costs=d,
                      objective=float(lp.c @ x) + lp.obj_offset,
                      iterations=sx.iterations, basis=basis)
