"""Stabilized multi-cut Benders decomposition of the period-scenario program.

The top problem holds every first-stage column and row plus one epigraph
variable ``phi[p, s]`` per operational block. Each block becomes a
sub-problem whose complicating variables are local copies pinned to the
proposal by ``fix`` rows; the duals of those rows are the cut slopes.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericalBreakdown, SolverFailure, Stalled
from .lp import HighsSession, SparseLP
from .program import (
    ModelFlags,
    _Context,
    _Emitter,
    _add_block,
    _first_stage_columns,
    _first_stage_rows,
    _min_emission_coefs,
    block_summary,
    blocks_from_repset,
    complicating_keys,
    cost_breakdown,
    plan_from_values,
)
from .clustering import count_combinations

logger = logging.getLogger(__name__)

CENSUS_GROUPS = {
    "cap": "capacities", "sto_in": "capacities", "sto_out": "capacities", "sto_size": "capacities",
    "sto_seas": "capacities", "link": "capacities",
    "contract": "contracts", "base": "contracts",
    "start": "seasonal_starts", "dseas": "seasonal_deltas",
    "dmul": "multi_year_deltas", "em": "emissions",
}


# -- problem pieces -----------------------------------------------------------------

@dataclass
class Cut:
    sub: int
    iteration: int
    point: np.ndarray       # proposal values of the sub's complicating variables
    value: float            # sub objective at the proposal
    slope: np.ndarray       # duals of the fix rows
    inactive: int = 0

    def evaluate(self, z):
        return self.value + float(self.slope @ (np.asarray(z) - self.point))


@dataclass
class SubProblem:
    id: int
    block: object
    keys: list
    lp: SparseLP
    fix_rows: np.ndarray
    bmap: dict
    categories: np.ndarray
    row_tags: list
    elastic: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    _session: Optional[HighsSession] = field(default=None, repr=False)

    @property
    def key(self):
        return self.block.key

    def violation(self, x):
        return float(np.max(x[self.elastic], initial=0.0))

    def session(self):
        if self._session is None:
            self._session = HighsSession(self.lp)
        return self._session

    def solve(self, values):
        """Objective, subgradient and primal vector for a proposal of the complicating variables.

        The objective includes the elastic penalty; ``violation(x)`` tells how far
        the proposal had to be stretched.
        """
        values = np.asarray(values, dtype=float)
        s = self.session()
        s.set_row_bounds(self.fix_rows, values, values)
        sol = _robust_solve(s, f"sub-problem {self.key}")
        return sol.objective, sol.duals[self.fix_rows].copy(), sol.x


@dataclass
class TopProblem:
    lp: SparseLP
    first_stage: dict            # key -> column
    phi: np.ndarray              # epigraph column per sub-problem
    rho: np.ndarray
    links: list                  # per sub-problem: top columns of its complicating keys
    categories: np.ndarray
    row_tags: list
    blocks: list
    system: object
    flags: ModelFlags
    combinations: int
    census: dict
    group_of: dict = field(default_factory=dict)   # top column -> census group
    cuts: list = field(default_factory=list)
    _session: Optional[HighsSession] = field(default=None, repr=False)

    @property
    def base_rows(self):
        return self.lp.num_rows

    def session(self):
        if self._session is None:
            self._session = HighsSession(self.lp)
        return self._session

    def first_stage_cost(self, x):
        mask = np.ones(self.lp.num_cols, dtype=bool)
        mask[self.phi] = False
        return float(self.lp.c[mask] @ x[mask]) + self.lp.obj_offset

    def complicating_columns(self):
        return np.unique(np.concatenate([cols for cols in self.links])) if self.links else np.zeros(0, int)


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)      # dicts iter, lb, ub, gap, radius, seconds
    status: str = "NotConverged"
    cuts_added: int = 0
    cuts_dropped: int = 0
    census: dict = field(default_factory=dict)

    @property
    def iterations(self):
        return len(self.rows)

    @property
    def lower_bound(self):
        return self.rows[-1]["lb"] if self.rows else -math.inf

    @property
    def upper_bound(self):
        return self.rows[-1]["ub"] if self.rows else math.inf

    @property
    def gap(self):
        return self.rows[-1]["gap"] if self.rows else math.inf

    def write_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "lb", "ub", "gap", "radius", "seconds"])
            for r in self.rows:
                w.writerow([r["iter"], repr(r["lb"]), repr(r["ub"]), repr(r["gap"]), repr(r["radius"]),
                            f"{r['seconds']:.3f}"])

    def to_dict(self):
        return {"status": self.status, "iterations": self.iterations, "lower_bound": self.lower_bound,
                "upper_bound": self.upper_bound, "gap": self.gap, "cuts_added": self.cuts_added,
                "cuts_dropped": self.cuts_dropped, "census": dict(self.census)}


@dataclass
class BendersConfig:
    gap_target: float = 0.005
    max_iter: int = 500
    workers: int = 1
    stabilization: bool = True
    radius: float = 2.0             # initial box half-width, relative to the per-variable scale
    scale_floor: float = 10.0       # scale = max(|incumbent|, scale_floor)
    group_share: float = 0.1        # scale floor as a share of the largest incumbent value in the group
    min_radius: float = 0.6         # below this the box is lifted for one step
    box_groups: Optional[tuple] = None   # census groups inside the box; None boxes every complicating variable
    max_radius: float = 1e6
    serious_fraction: float = 0.01  # serious step: UB improves by more than this share of the gap
    stall_window: int = 100
    cut_age: int = 50
    eps: float = 1e-9
    feas_tol: float = 1e-6          # largest relative elastic stretch accepted for an incumbent


# -- decomposition --------------------------------------------------------------------

def decompose_blocks(system, blocks, flags: ModelFlags = ModelFlags(), combinations=1, penalty=None):
    ctx = _Context(system, flags, system.time.periods)
    ctx.check_balances()
    # top problem: all first-stage columns and rows, plus one epigraph variable per block
    em = _Emitter()
    fs = _first_stage_columns(em, ctx, blocks)
    min_em = {blk.key: _min_emission_coefs(ctx, blk) for blk in blocks}
    _first_stage_rows(em, ctx, fs, blocks, min_em)
    phi = np.array([em.col(f"phi[{b.p},{b.s}]", 0.0, np.inf, b.rho, "recourse") for b in blocks], dtype=int)
    top_lp = em.b.build()
    top_lp.obj_offset = em.offset

    subs = []
    links = []
    census_cols = {}
    group_of = {}
    for k, blk in enumerate(blocks):
        keys = complicating_keys(ctx, blk)
        sem = _Emitter()
        comp = {key: sem.col("copy:" + _keyname(key), -np.inf, np.inf) for key in keys}
        bmap = _add_block(sem, ctx, blk, comp, 1.0)
        # elastic fix rows: copy = proposal - over + under, with a penalty far above any marginal value
        cost = np.abs(np.asarray(sem.b._c)) if sem.b.num_cols else np.zeros(1)
        big = penalty if penalty is not None else 100.0 * ctx.T * max(1.0, float(cost.max()))
        over = sem.cols(["over:" + _keyname(key) for key in keys], 0.0, np.inf, big)
        under = sem.cols(["under:" + _keyname(key) for key in keys], 0.0, np.inf, big)
        fix_rows = np.array([sem.row([comp[key], over[i], under[i]], [1.0, 1.0, -1.0], "E", 0.0, "fix")
                             for i, key in enumerate(keys)], dtype=int)
        lp = sem.b.build()
        subs.append(SubProblem(k, blk, keys, lp, fix_rows, bmap, np.asarray(sem.cat), list(sem.b.row_tags),
                               np.concatenate([over, under])))
        links.append(np.array([fs[key] for key in keys], dtype=int))
        for key in keys:
            census_cols.setdefault(CENSUS_GROUPS[key[0]], set()).add(fs[key])
            group_of[fs[key]] = CENSUS_GROUPS[key[0]]
    census = {g: len(census_cols.get(g, ())) for g in sorted(set(CENSUS_GROUPS.values()))}
    census["total"] = sum(census.values())
    top = TopProblem(top_lp, fs, phi, np.array([b.rho for b in blocks]), links, np.asarray(em.cat),
                     list(em.b.row_tags), list(blocks), system, flags, combinations, census, group_of)
    logger.info("decomposed into a %dx%d top problem and %d sub-problems (%d complicating variables)",
                top_lp.num_rows, top_lp.num_cols, len(subs), census["total"])
    return top, subs


def decompose(system, repset, sample, flags: ModelFlags = ModelFlags(), penalty=None):
    blocks = blocks_from_repset(system, repset, sample)
    return decompose_blocks(system, blocks, flags, count_combinations(repset), penalty)


def _keyname(key):
    return f"{key[0]}[{','.join(str(k) for k in key[1:])}]"


def equation_tags(top: TopProblem, subs) -> Counter:
    """Row-tag multiset of top plus sub-problems, without fix and cut rows."""
    tags = Counter(top.row_tags)
    for sub in subs:
        tags.update(t for t in sub.row_tags if t != "fix")
    return tags


def solve_sub(sub: SubProblem, proposal):
    """(objective, subgradient) of one sub-problem at ``proposal`` (values of ``sub.keys``)."""
    obj, grad, _ = sub.solve(proposal)
    return obj, grad


# -- stabilization ------------------------------------------------------------------------

def stabilize(top: TopProblem, incumbent, radius, columns=None, scale_floor=10.0, group_share=0.0):
    """Box bounds around ``incumbent`` on ``columns``, clipped to the global bounds.

    The half-width of column j is ``radius * scale_j`` with
    ``scale_j = max(|z_j|, scale_floor, group_share * max |z| over j's variable group)``.
    Returns ``(lb, ub)`` for the full top column vector.
    """
    lb = top.lp.lb.copy()
    ub = top.lp.ub.copy()
    if incumbent is None or not math.isfinite(radius):
        return lb, ub
    cols = top.complicating_columns() if columns is None else np.asarray(columns, dtype=int)
    center = np.asarray(incumbent, dtype=float)[cols]
    scale = np.maximum(np.abs(center), scale_floor)
    if group_share > 0.0:
        groups = np.array([top.group_of.get(int(c), "") for c in cols])
        for g in np.unique(groups):
            sel = groups == g
            scale[sel] = np.maximum(scale[sel], group_share * np.abs(center[sel]).max())
    half = radius * scale
    lb[cols] = np.minimum(np.maximum(lb[cols], center - half), ub[cols])
    ub[cols] = np.maximum(np.minimum(ub[cols], center + half), lb[cols])
    return lb, ub


# -- main loop --------------------------------------------------------------------------

def _add_cuts(top: TopProblem, cuts):
    """Append cut rows ``phi - slope'z >= value - slope'point`` to the top session."""
    lo, hi, starts, index, values = [], [], [], [], []
    for cut in cuts:
        cols = top.links[cut.sub]
        acc = {int(top.phi[cut.sub]): 1.0}
        tiny = 1e-12 * max(1.0, float(np.abs(cut.slope).max(initial=0.0)))
        for c, v in zip(cols, cut.slope):
            if abs(v) > tiny:
                acc[int(c)] = acc.get(int(c), 0.0) - float(v)
        starts.append(len(index))
        for c in sorted(acc):
            index.append(c)
            values.append(acc[c])
        lo.append(cut.value - float(cut.slope @ cut.point))
        hi.append(math.inf)
    if lo:
        top.session().add_rows(lo, hi, starts, index, values)
    top.cuts.extend(cuts)


def _drop_cuts(top: TopProblem, max_age):
    old = [k for k, cut in enumerate(top.cuts) if cut.inactive >= max_age]
    if not old:
        return 0
    top.session().delete_rows(np.array(old) + top.base_rows)
    keep = set(range(len(top.cuts))) - set(old)
    top.cuts = [c for k, c in enumerate(top.cuts) if k in keep]
    return len(old)


def _robust_solve(session: HighsSession, what):
    """Solve from the warm start; on trouble retry cold, then with the interior-point method."""
    for attempt in range(3):
        try:
            if attempt == 2:
                session.h.setOptionValue("solver", "ipm")
            sol = session.solve()
        except SolverFailure:
            sol = None
        finally:
            if attempt == 2:
                session.h.setOptionValue("solver", "simplex")
        if sol is not None and sol.optimal:
            return sol
        logger.debug("%s: solve attempt %d failed, discarding the basis", what, attempt + 1)
        session.h.clearSolver()
    raise NumericalBreakdown(f"{what} could not be solved to optimality")


def _solve_top(top: TopProblem, lb, ub):
    s = top.session()
    s.set_col_bounds(np.arange(top.lp.num_cols), lb, ub)
    return _robust_solve(s, "top problem")


def _evaluate(subs, top, x, pool):
    proposals = [x[cols] for cols in top.links]
    if pool is None:
        return [sub.solve(z) for sub, z in zip(subs, proposals)]
    return list(pool.map(lambda args: args[0].solve(args[1]), zip(subs, proposals)))


def iterate(top: TopProblem, subs, gap_target=0.005, max_iter=500, config: Optional[BendersConfig] = None,
            workers=None, stabilization=None):
    """Run Benders iterations; returns (PlanSolution, ConvergenceReport)."""
    cfg = config or BendersConfig()
    cfg = BendersConfig(**{**cfg.__dict__, "gap_target": gap_target, "max_iter": max_iter})
    if workers is not None:
        cfg.workers = workers
    if stabilization is not None:
        cfg.stabilization = stabilization
    report = ConvergenceReport(census=dict(top.census))
    radius = cfg.radius if cfg.stabilization else math.inf
    comp_cols = top.complicating_columns()
    if cfg.box_groups is not None:
        comp_cols = np.array([c for c in comp_cols if top.group_of.get(int(c)) in cfg.box_groups], dtype=int)
    lb_best = -math.inf
    ub_best = math.inf
    incumbent = None
    incumbent_subs = None
    best_gap = math.inf
    best_gap_iter = 0
    t0 = time.perf_counter()
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for it in range(1, cfg.max_iter + 1):
            # lower bound from the cut model without the trust region
            glb, gub = top.lp.lb, top.lp.ub
            lb_sol = _solve_top(top, glb, gub)
            lb_best = max(lb_best, lb_sol.objective)
            if incumbent is None or not math.isfinite(radius):
                sol = lb_sol
            else:
                box_lb, box_ub = stabilize(top, incumbent, radius, comp_cols, cfg.scale_floor,
                                            cfg.group_share)
                sol = _solve_top(top, box_lb, box_ub)
            x = sol.x.copy()
            # cut activity is judged at the proposal
            nb = top.base_rows
            if top.cuts:
                for cut in top.cuts:
                    z = x[top.links[cut.sub]]
                    slack = x[top.phi[cut.sub]] - cut.evaluate(z)
                    cut.inactive = 0 if slack <= 1e-6 * max(1.0, abs(cut.value)) else cut.inactive + 1
            results = _evaluate(subs, top, x, pool)
            phis = np.array([r[0] for r in results])
            ub_k = top.first_stage_cost(x) + float(top.rho @ phis)
            gap_before = (ub_best - lb_best) if math.isfinite(ub_best) else math.inf
            stretched = max(sub.violation(r[2]) / max(1.0, float(np.abs(z).max(initial=0.0)))
                            for sub, r, z in zip(subs, results, (x[c] for c in top.links)))
            if stretched > cfg.feas_tol:
                logger.warning("benders %d: proposal needed elastic slack %.3g; not an incumbent", it, stretched)
            improved = ub_k < ub_best and stretched <= cfg.feas_tol
            if improved:
                serious = (not math.isfinite(gap_before)) or (ub_best - ub_k > cfg.serious_fraction * gap_before)
                ub_best = ub_k
                incumbent = x
                incumbent_subs = [r[2] for r in results]
            else:
                serious = False
            if cfg.stabilization and incumbent is not None and it > 1:
                if not math.isfinite(radius):
                    radius = cfg.radius          # back in the box after an unrestricted step
                elif serious:
                    radius = min(radius * 2.0, cfg.max_radius)
                else:
                    radius *= 0.5
                    if radius < cfg.min_radius:
                        radius = math.inf        # box collapsed: take one unrestricted step
            new_cuts = [Cut(k, it, x[top.links[k]].copy(), float(r[0]), r[1]) for k, r in enumerate(results)]
            _add_cuts(top, new_cuts)
            report.cuts_added += len(new_cuts)
            report.cuts_dropped += _drop_cuts(top, cfg.cut_age)
            gap = (ub_best - lb_best) / max(abs(ub_best), cfg.eps)
            report.rows.append({"iter": it, "lb": lb_best, "ub": ub_best, "gap": gap,
                                "radius": radius, "seconds": time.perf_counter() - t0})
            logger.info("benders %d: lb=%.6g ub=%.6g gap=%.3g radius=%.3g cuts=%d", it, lb_best, ub_best, gap,
                        radius, len(top.cuts))
            if gap <= cfg.gap_target:
                report.status = "Converged"
                break
            if gap < best_gap - 1e-12:
                best_gap, best_gap_iter = gap, it
            elif it - best_gap_iter >= cfg.stall_window:
                report.status = "Stalled"
                raise Stalled(report, f"gap {gap:.4g} did not improve in {cfg.stall_window} iterations")
        else:
            report.status = "NotConverged"
    finally:
        if pool is not None:
            pool.shutdown()
    plan = _plan(top, subs, incumbent, incumbent_subs, ub_best, report)
    return plan, report


def _plan(top: TopProblem, subs, x, sub_x, objective, report):
    fs = top.first_stage

    def fs_value(key):
        return float(x[fs[key]])

    results = [block_summary(top.system, top.flags, sub.block, sub.bmap, xs) for sub, xs in zip(subs, sub_x)]
    breakdown = cost_breakdown(top.lp, top.categories, x)
    for sub, xs in zip(subs, sub_x):
        part = cost_breakdown(sub.lp, sub.categories, xs)
        for k, v in part.items():
            breakdown[k] += sub.block.rho * v
    info = {"lower_bound": report.lower_bound, "gap": report.gap, "iterations": report.iterations,
            "census": dict(top.census)}
    return plan_from_values(top.system, top.flags, top.blocks, fs_value, results, objective, breakdown,
                            "benders", report.status, top.combinations, info)


def solve_benders(system, repset, sample, flags: ModelFlags = ModelFlags(), config: Optional[BendersConfig] = None):
    cfg = config or BendersConfig()
    top, subs = decompose(system, repset, sample, flags)
    return iterate(top, subs, cfg.gap_target, cfg.max_iter, cfg)
