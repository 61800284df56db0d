"""Extensive-form planning LP: deterministic and period-scenario stochastic.

First-stage decisions (capacities, contract baselines, long-term storage
bookkeeping, per-block emissions) are shared by all operational blocks; each
block (period p, scenario s) carries its own dispatch weighted by rho[p, s].

The same block assembly is used by the Benders decomposition, which replaces
first-stage columns by local copies fixed through equality rows.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .clustering import ClimateSample, RepresentativeSet, count_combinations
from .errors import ProbabilityMismatch, SchemaViolation, StatusNotOptimal, UnbalancedCarrier
from .lp import LPBuilder, LPSolution, SparseLP, write_triplets
from .system import EnergySystem, aggregate_series

logger = logging.getLogger(__name__)

CATEGORIES = ("investment", "imports", "variable", "unserved")


@dataclass(frozen=True)
class ModelFlags:
    multi_year: bool = True
    alpha: float = 0.01
    beta: float = 1.0
    gamma: float = 1.0
    eta: Optional[float] = None          # overrides every storage's eta when set
    eq8_base: str = "total"              # "total": alpha * l0 ; "multi_year": alpha * l0_mul
    emission_cap: object = "system"      # "system", None (no policy) or a number
    power_carrier: str = "elec"

    def __post_init__(self):
        if not (0 < self.alpha <= 1):
            raise SchemaViolation("alpha", "must lie in (0, 1]")
        if self.beta < 0 or self.gamma < 0:
            raise SchemaViolation("beta/gamma", "must be nonnegative")
        if self.eta is not None and not (0 < self.eta <= 1):
            raise SchemaViolation("eta", "must lie in (0, 1]")
        if self.eq8_base not in ("total", "multi_year"):
            raise SchemaViolation("eq8_base", "must be 'total' or 'multi_year'")

    def cap(self, system: EnergySystem):
        if self.emission_cap == "system":
            return system.emission.cap
        if self.emission_cap is None:
            return None
        value = float(self.emission_cap)
        return None if value == -math.inf else value


@dataclass
class Block:
    """One operational block: calendar period ``p``, scenario ``s``."""

    p: int
    s: int
    rho: float
    year: object
    data: dict          # series key -> base-timestep array of one period

    @property
    def key(self):
        return (self.p, self.s)


@dataclass
class RobustStorageBlock:
    storage: str
    region: str
    alpha: float
    beta: float
    gamma: float
    eta: float
    multi_year: bool
    columns: dict = field(default_factory=dict)   # symbol -> first-stage key(s)


@dataclass
class DecisionIndex:
    """Bijective map between variable keys and LP columns."""

    names: list
    first_stage: dict       # key tuple -> column
    blocks: list            # per block: {entity key -> np.ndarray of columns}

    def column(self, key):
        return self.first_stage[key]

    def name(self, col):
        return self.names[col]


@dataclass
class ProgramArtifacts:
    lp: SparseLP
    index: DecisionIndex
    row_tags: list
    rho: dict
    blocks: list
    storage_blocks: list
    categories: np.ndarray
    system: EnergySystem
    flags: ModelFlags
    counts: dict

    def tag_counts(self):
        return Counter(self.row_tags)

    def write_triplets(self, directory):
        write_triplets(self.lp, directory, self.row_tags)


# -- model context --------------------------------------------------------------

class _Context:
    """Static data derived from the system shared by every block."""

    def __init__(self, system: EnergySystem, flags: ModelFlags, periods: int):
        self.system = system
        self.flags = flags
        self.T = system.time.timesteps_per_period
        self.P = periods
        self.H = self.P * self.T
        self.res = {c.id: c.resolution for c in system.carriers}
        self.balances = system.balances()
        self.policy = flags.cap(system)
        self.long_term = [(s, r) for s in system.storages if s.long_term for r in s.regions]
        self.short_term = [(s, r) for s in system.storages if not s.long_term for r in s.regions]
        self.tech_units = [(t, r) for t in system.techs for r in t.regions]

    def tech_res(self, tech):
        return min(self.res[c] for c in tech.carriers())

    def multi_year(self, storage):
        return self.flags.multi_year and storage.multi_year and storage.long_term

    def eta(self, storage):
        return self.flags.eta if self.flags.eta is not None else storage.eta

    def block_series(self, block: Block, name, region, res, kind):
        key = f"{name}__{region}"
        if key in block.data:
            arr = block.data[key]
        elif name in block.data:
            arr = block.data[name]
        else:
            raise SchemaViolation(name, f"no series for region {region}")
        return aggregate_series(arr, res, kind=kind)

    def check_balances(self):
        touched = set()
        sysm = self.system
        for t, r in self.tech_units:
            for c in t.carriers():
                touched.add((c, r))
        for s in sysm.storages:
            for r in s.regions:
                touched.add((s.carrier, r))
        for link in sysm.links:
            touched.add((link.carrier, link.source))
            touched.add((link.carrier, link.target))
        for c in sysm.contracts:
            touched.add((c.carrier, c.region))
        for d in sysm.demands:
            touched.add((d.carrier, d.region))
        for c, r in self.balances:
            if (c, r) not in touched:
                raise UnbalancedCarrier(c, r)


class _Emitter:
    """LPBuilder plus cost category bookkeeping."""

    def __init__(self):
        self.b = LPBuilder()
        self.cat = []
        self.offset = 0.0

    def col(self, name, lb=0.0, ub=np.inf, cost=0.0, cat=""):
        self.cat.append(cat)
        return self.b.add_col(name, lb, ub, cost)

    def cols(self, names, lb=0.0, ub=np.inf, cost=0.0, cat=""):
        self.cat.extend([cat] * len(names))
        return self.b.add_cols(names, lb, ub, cost)

    def row(self, cols, vals, sense, rhs, tag):
        return self.b.add_row(cols, vals, sense, rhs, tag)


def _nz(value):
    return value if value is not None and math.isfinite(value) else np.inf


# -- first stage -----------------------------------------------------------------

def _first_stage_columns(em: _Emitter, ctx: _Context, blocks):
    """Create all first-stage columns; returns key -> column."""
    sysm = ctx.system
    fs = {}
    for t, r in ctx.tech_units:
        lo = max(t.existing, t.capacity_min)
        hi = max(lo, t.capacity_max) if math.isfinite(t.capacity_max) else np.inf
        fs[("cap", t.id, r)] = em.col(f"cap[{t.id},{r}]", lo, hi, t.invest_cost, "investment")
        em.offset -= t.invest_cost * t.existing
    for s in sysm.storages:
        for r in s.regions:
            for kind in ("sto_in", "sto_out"):
                fs[(kind, s.id, r)] = em.col(f"{kind}[{s.id},{r}]", s.existing_power, _nz(s.power_max),
                                             s.invest_cost_power, "investment")
                em.offset -= s.invest_cost_power * s.existing_power
            fs[("sto_size", s.id, r)] = em.col(f"sto_size[{s.id},{r}]", s.existing_energy, _nz(s.energy_max),
                                               s.invest_cost_energy, "investment")
            em.offset -= s.invest_cost_energy * s.existing_energy
            if s.long_term:
                for kind in ("sto_seas", "sto_mul", "l0", "l0_seas", "l0_mul", "leeway"):
                    fs[(kind, s.id, r)] = em.col(f"{kind}[{s.id},{r}]")
                for p in range(ctx.P):
                    fs[("w", s.id, r, p)] = em.col(f"w[{s.id},{r},{p}]", -np.inf, np.inf)
                    fs[("b", s.id, r, p)] = em.col(f"b[{s.id},{r},{p}]", -np.inf, np.inf)
                    fs[("dseas", s.id, r, p)] = em.col(f"dseas[{s.id},{r},{p}]", -np.inf, np.inf)
                    fs[("start", s.id, r, p)] = em.col(f"start[{s.id},{r},{p}]")
                if ctx.multi_year(s):
                    for blk in blocks:
                        fs[("dmul", s.id, r, blk.p, blk.s)] = em.col(
                            f"dmul[{s.id},{r},{blk.p},{blk.s}]", -np.inf, np.inf)
    for link in sysm.links:
        fs[("link", link.id)] = em.col(f"link[{link.id}]", link.existing, _nz(link.capacity_max),
                                       link.invest_cost, "investment")
        em.offset -= link.invest_cost * link.existing
    for c in sysm.contracts:
        fs[("contract", c.id)] = em.col(f"contract[{c.id}]", 0.0, _nz(c.capacity_max), ctx.H * c.nu_base, "imports")
        for p in range(ctx.P):
            fs[("base", c.id, p)] = em.col(f"base[{c.id},{p}]")
    if ctx.policy is not None:
        for blk in blocks:
            fs[("em", blk.p, blk.s)] = em.col(f"em[{blk.p},{blk.s}]", -np.inf, np.inf)
    return fs


def _first_stage_rows(em: _Emitter, ctx: _Context, fs, blocks, min_emission):
    """Rows involving first-stage columns only."""
    sysm = ctx.system
    f = ctx.flags
    by_period = {}
    for blk in blocks:
        by_period.setdefault(blk.p, []).append(blk)
    # expected-emission cap and induced lower bounds on block emissions
    if ctx.policy is not None:
        em.row([fs[("em", b.p, b.s)] for b in blocks], [b.rho for b in blocks], "L", ctx.policy, "3b")
        for blk in blocks:
            coefs = min_emission[blk.key]
            cols = [fs[("em", blk.p, blk.s)]] + [fs[k] for k in coefs]
            vals = [1.0] + [-v for v in coefs.values()]
            em.row(cols, vals, "G", 0.0, "3b")
    # contract baseline: annual volume, scenario-independent per period
    for c in sysm.contracts:
        cols = [fs[("base", c.id, p)] for p in range(ctx.P)] + [fs[("contract", c.id)]]
        em.row(cols, [1.0] * ctx.P + [-float(ctx.H)], "L", 0.0, "1a_1")
    storage_blocks = []
    for s, r in ctx.long_term:
        key = lambda kind, *rest: fs[(kind, s.id, r) + tuple(rest)]  # noqa: E731
        multi = ctx.multi_year(s)
        P = ctx.P
        rb = RobustStorageBlock(s.id, r, f.alpha, f.beta, f.gamma, ctx.eta(s), multi)
        rb.columns = {k: (k, s.id, r) for k in ("sto_size", "sto_seas", "sto_mul", "l0", "l0_seas", "l0_mul",
                                                "leeway")}
        storage_blocks.append(rb)
        # seasonal start levels: cyclic over the year, start of period 1 equals l0_seas
        for p in range(P - 1):
            em.row([key("start", p + 1), key("start", p), key("dseas", p)], [1.0, -1.0, -1.0], "E", 0.0, "7a")
        em.row([key("dseas", p) for p in range(P)], [1.0] * P, "E", 0.0, "7a")
        em.row([key("start", 0), key("l0_seas")], [1.0, -1.0], "E", 0.0, "10")
        for p in range(P):
            em.row([key("start", p), key("sto_seas")], [1.0, -1.0], "L", 0.0, "12a")
        # expected multi-year delta covers the drift margin
        l0_col = key("l0") if f.eq8_base == "total" else key("l0_mul")
        cols, vals = [l0_col], [f.alpha]
        if multi:
            for blk in blocks:
                cols.append(key("dmul", blk.p, blk.s))
                vals.append(-blk.rho)
        em.row(cols, vals, "L", 0.0, "8")
        # worst and best case deltas
        for p in range(P):
            if multi:
                for blk in by_period.get(p, []):
                    em.row([key("w", p), key("dmul", p, blk.s)], [1.0, -1.0], "L", 0.0, "9a")
            em.row([key("w", p)], [1.0], "L", 0.0, "9b")
            if multi:
                for blk in by_period.get(p, []):
                    em.row([key("b", p), key("dmul", p, blk.s)], [1.0, -1.0], "G", 0.0, "9c")
            em.row([key("b", p)], [1.0], "G", 0.0, "9d")
        # starting levels
        em.row([key("l0"), key("l0_seas"), key("l0_mul")], [1.0, -1.0, -1.0], "E", 0.0, "10")
        em.row([key("l0_mul")] + [key("w", p) for p in range(P)], [1.0] + [f.beta] * P, "G", 0.0, "10a")
        for ph in range(P):
            em.row([key("l0_mul")] + [key("w", p) for p in range(ph + 1)], [1.0] * (ph + 2), "G", 0.0, "10b")
        for ph in range(P):
            em.row([key("l0_seas")] + [key("dseas", p) for p in range(ph + 1)], [1.0] * (ph + 2), "G", 0.0,
                   "10a0")
        # leeway and multi-year size
        em.row([key("leeway")] + [key("b", p) for p in range(P)], [1.0] + [-f.gamma] * P, "G", 0.0, "11a")
        for ph in range(P):
            em.row([key("leeway")] + [key("b", p) for p in range(ph + 1)], [1.0] + [-1.0] * (ph + 1), "G", 0.0,
                   "11b")
        em.row([key("sto_mul"), key("l0_mul"), key("leeway")], [1.0, -1.0, -1.0], "E", 0.0, "11c")
        # total energy capacity
        em.row([key("sto_size"), key("sto_seas"), key("sto_mul")], [1.0, -1.0, -1.0], "E", 0.0, "12b")
    return storage_blocks


def _min_emission_coefs(ctx: _Context, blk: Block):
    """Lowest emissions reachable in a block as linear function of capacities."""
    coefs = {}
    for t, r in ctx.tech_units:
        if t.emission_factor == 0:
            continue
        if not (t.must_run or t.emission_factor < 0):
            continue
        ra = ctx.tech_res(t)
        avail = (ctx.block_series(blk, t.availability, r, ra, "factor") if t.availability
                 else np.ones(ctx.T // ra))
        coefs[("cap", t.id, r)] = coefs.get(("cap", t.id, r), 0.0) + t.emission_factor * ra * float(avail.sum())
    return coefs


# -- operational block ------------------------------------------------------------

def _add_block(em: _Emitter, ctx: _Context, blk: Block, comp, weight):
    """Dispatch columns and rows of one block; ``comp`` maps first-stage keys to columns."""
    sysm = ctx.system
    T = ctx.T
    tag = f"[{blk.p},{blk.s}]"
    bmap = {}
    bal_terms = {key: [[] for _ in range(T // ctx.res[key[0]])] for key in ctx.balances}
    emis_cols, emis_vals = [], []

    def contribute(carrier, region, step_res, idx, cols, coef):
        key = (carrier, region)
        if key not in bal_terms or coef == 0:
            return
        rc = ctx.res[carrier]
        for k, col in zip(idx, cols):
            bal_terms[key][k * step_res // rc].append((col, coef))

    # conversion technologies
    for t, r in ctx.tech_units:
        ra = ctx.tech_res(t)
        n = T // ra
        cols = em.cols([f"act[{t.id},{r}]{tag}[{k}]" for k in range(n)], 0.0, np.inf, weight * t.var_cost,
                       "variable")
        bmap[("act", t.id, r)] = cols
        avail = (ctx.block_series(blk, t.availability, r, ra, "factor") if t.availability else np.ones(n))
        cap = comp[("cap", t.id, r)]
        bmap[("avail", t.id, r)] = (cap, ra * float(np.sum(avail)))
        sense = "E" if t.must_run else "L"
        for k in range(n):
            em.row([cols[k], cap], [1.0, -ra * float(avail[k])], sense, 0.0, "3c")
        idx = range(n)
        for c, v in t.outputs.items():
            contribute(c, r, ra, idx, cols, v)
        for c, v in t.inputs.items():
            contribute(c, r, ra, idx, cols, -v)
        if t.emission_factor:
            emis_cols.extend(cols)
            emis_vals.extend([t.emission_factor] * n)

    # storages
    for s in sysm.storages:
        rs = ctx.res[s.carrier]
        n = T // rs
        for r in s.regions:
            pre = f"[{s.id},{r}]{tag}"
            ch = em.cols([f"ch{pre}[{k}]" for k in range(n)])
            dis = em.cols([f"dis{pre}[{k}]" for k in range(n)])
            lvl = em.cols([f"lvl{pre}[{k}]" for k in range(n)])
            bmap[("ch", s.id, r)], bmap[("dis", s.id, r)], bmap[("lvl", s.id, r)] = ch, dis, lvl
            inflow = (ctx.block_series(blk, s.inflow, r, rs, "demand") if s.inflow else np.zeros(n))
            x_in, x_out = comp[("sto_in", s.id, r)], comp[("sto_out", s.id, r)]
            contribute(s.carrier, r, rs, range(n), ch, -1.0)
            contribute(s.carrier, r, rs, range(n), dis, 1.0)
            if not s.long_term:
                spill = em.cols([f"spill{pre}[{k}]" for k in range(n)]) if s.inflow else None
                if spill is not None:
                    bmap[("spill", s.id, r)] = spill
                for k in range(n):
                    cols = [lvl[k], ch[k], dis[k]]
                    vals = [1.0, -s.eff_charge, 1.0 / s.eff_discharge]
                    if n > 1:
                        cols.append(lvl[(k - 1) % n])
                        vals.append(-1.0)
                    if spill is not None:
                        cols.append(spill[k])
                        vals.append(1.0)
                    em.row(cols, vals, "E", float(inflow[k]), "5a")
                size = comp[("sto_size", s.id, r)]
                for k in range(n):
                    em.row([ch[k], x_in], [1.0, -rs], "L", 0.0, "5b")
                    em.row([dis[k], x_out], [1.0, -rs], "L", 0.0, "5c")
                    em.row([lvl[k], size], [1.0, -1.0], "L", 0.0, "5d")
                continue
            multi = ctx.multi_year(s)
            short = em.cols([f"short{pre}[{k}]" for k in range(n)], 0.0, np.inf,
                            weight * sysm.unserved_cost_for(s.carrier, r), "unserved")
            spill = em.cols([f"spill{pre}[{k}]" for k in range(n)])
            bmap[("short", s.id, r)], bmap[("spill", s.id, r)] = short, spill
            if multi:
                m_in = em.cols([f"min{pre}[{k}]" for k in range(n)])
                m_out = em.cols([f"mout{pre}[{k}]" for k in range(n)])
                bmap[("min", s.id, r)], bmap[("mout", s.id, r)] = m_in, m_out
            start = comp[("start", s.id, r, blk.p)]
            for k in range(n):
                cols = [lvl[k], ch[k], dis[k], short[k], spill[k]]
                vals = [1.0, -s.eff_charge, 1.0 / s.eff_discharge, -1.0, 1.0]
                cols.append(lvl[k - 1] if k > 0 else start)
                vals.append(-1.0)
                if multi:
                    cols += [m_in[k], m_out[k]]
                    vals += [-1.0, 1.0]
                em.row(cols, vals, "E", float(inflow[k]), "6a")
            for k in range(n):
                em.row([ch[k], x_in], [1.0, -rs], "L", 0.0, "6b")
                em.row([dis[k], x_out], [1.0, -rs], "L", 0.0, "6c")
            seas = comp[("sto_seas", s.id, r)]
            for k in range(n):
                em.row([lvl[k], seas], [1.0, -1.0], "L", 0.0, "12a")
            em.row([lvl[n - 1], start, comp[("dseas", s.id, r, blk.p)]], [1.0, -1.0, -1.0], "E", 0.0, "7a")
            if multi:
                eta = ctx.eta(s)
                cols = [comp[("dmul", s.id, r, blk.p, blk.s)]] + list(m_out) + list(m_in)
                vals = [1.0] + [-eta] * n + [1.0] * n
                em.row(cols, vals, "E", 0.0, "7b")

    # exchange links
    for link in sysm.links:
        rl = ctx.res[link.carrier]
        n = T // rl
        fwd = em.cols([f"fwd[{link.id}]{tag}[{k}]" for k in range(n)], 0.0, np.inf, weight * link.var_cost,
                      "variable")
        bwd = em.cols([f"bwd[{link.id}]{tag}[{k}]" for k in range(n)], 0.0, np.inf, weight * link.var_cost,
                      "variable")
        bmap[("fwd", link.id)], bmap[("bwd", link.id)] = fwd, bwd
        cap = comp[("link", link.id)]
        for k in range(n):
            em.row([fwd[k], cap], [1.0, -rl], "L", 0.0, "3c")
            em.row([bwd[k], cap], [1.0, -rl], "L", 0.0, "3c")
        keep = 1.0 - link.loss
        contribute(link.carrier, link.source, rl, range(n), fwd, -1.0)
        contribute(link.carrier, link.target, rl, range(n), fwd, keep)
        contribute(link.carrier, link.target, rl, range(n), bwd, -1.0)
        contribute(link.carrier, link.source, rl, range(n), bwd, keep)

    # import contracts
    for c in sysm.contracts:
        rc = ctx.res[c.carrier]
        n = T // rc
        yb = em.cols([f"ybase[{c.id}]{tag}[{k}]" for k in range(n)])
        yf = em.cols([f"yflex[{c.id}]{tag}[{k}]" for k in range(n)], 0.0, np.inf if c.theta > 0 else 0.0)
        flex_cost = em.col(f"flexcost[{c.id}]{tag}", -np.inf, np.inf, weight, "imports")
        bmap[("yb", c.id)], bmap[("yf", c.id)], bmap[("flexcost", c.id)] = yb, yf, np.array([flex_cost])
        em.row(list(yb) + [comp[("base", c.id, blk.p)]], [1.0] * n + [-1.0], "L", 0.0, "1a_1")
        em.row(list(yf) + [comp[("contract", c.id)]], [1.0] * n + [-c.theta * T], "L", 0.0, "1a_2")
        em.row([flex_cost] + list(yf), [1.0] + [-c.nu_flex] * n, "E", 0.0, "1a_3")
        contribute(c.carrier, c.region, rc, range(n), yb, 1.0)
        contribute(c.carrier, c.region, rc, range(n), yf, 1.0)
        if c.emission_factor:
            emis_cols.extend(list(yb) + list(yf))
            emis_vals.extend([c.emission_factor] * (2 * n))

    # energy balances with unserved and curtailment slacks
    for (carrier, region) in ctx.balances:
        rc = ctx.res[carrier]
        n = T // rc
        d = sysm.demand_for(carrier, region)
        demand = ctx.block_series(blk, d.series, region, rc, "demand") if d is not None else np.zeros(n)
        cost = sysm.unserved_cost_for(carrier, region)
        uns = em.cols([f"unserved[{carrier},{region}]{tag}[{k}]" for k in range(n)], 0.0, np.inf, weight * cost,
                      "unserved")
        cur = em.cols([f"curtail[{carrier},{region}]{tag}[{k}]" for k in range(n)])
        bmap[("unserved", carrier, region)], bmap[("curtail", carrier, region)] = uns, cur
        bmap[("demand", carrier, region)] = demand
        for k in range(n):
            terms = bal_terms[(carrier, region)][k]
            cols = [col for col, _ in terms] + [uns[k], cur[k]]
            vals = [v for _, v in terms] + [1.0, -1.0]
            em.row(cols, vals, "E", float(demand[k]), "3c")

    if ctx.policy is not None:
        em.row(emis_cols + [comp[("em", blk.p, blk.s)]], emis_vals + [-1.0], "L", 0.0, "3c")
        bmap[("emission_terms",)] = (np.array(emis_cols, dtype=int), np.array(emis_vals))
    elif emis_cols:
        bmap[("emission_terms",)] = (np.array(emis_cols, dtype=int), np.array(emis_vals))
    return bmap


def complicating_keys(ctx: _Context, blk: Block):
    """First-stage keys a block depends on, in canonical order."""
    sysm = ctx.system
    keys = [("cap", t.id, r) for t, r in ctx.tech_units]
    for s in sysm.storages:
        for r in s.regions:
            keys += [("sto_in", s.id, r), ("sto_out", s.id, r)]
            keys.append(("sto_seas", s.id, r) if s.long_term else ("sto_size", s.id, r))
            if s.long_term:
                keys += [("start", s.id, r, blk.p), ("dseas", s.id, r, blk.p)]
                if ctx.multi_year(s):
                    keys.append(("dmul", s.id, r, blk.p, blk.s))
    keys += [("link", link.id) for link in sysm.links]
    for c in sysm.contracts:
        keys += [("contract", c.id), ("base", c.id, blk.p)]
    if ctx.policy is not None:
        keys.append(("em", blk.p, blk.s))
    return keys


# -- scenario grids -----------------------------------------------------------------

def _period_slice(arr, p, T):
    return np.asarray(arr[p * T:(p + 1) * T], dtype=float)


def _default_data(system: EnergySystem, p):
    T = system.time.timesteps_per_period
    return {k: _period_slice(v, p, T) for k, v in system.series.items()}


def blocks_from_bundle(system: EnergySystem, series=None, year="default"):
    """One block per period for a single climate year (``series``: key -> P*T array)."""
    P, T = system.time.periods, system.time.timesteps_per_period
    blocks = []
    for p in range(P):
        data = _default_data(system, p)
        for k, v in (series or {}).items():
            v = np.asarray(v, dtype=float)
            if v.size != P * T:
                raise SchemaViolation(k, f"expected {P * T} values, got {v.size}")
            data[k] = _period_slice(v, p, T)
        blocks.append(Block(p, 0, 1.0, year, data))
    return blocks


def blocks_from_repset(system: EnergySystem, repset: RepresentativeSet, sample: ClimateSample):
    P, T = system.time.periods, system.time.timesteps_per_period
    if repset.num_periods != P or sample.periods != P:
        raise SchemaViolation("periods", f"system has {P} periods, representative set {repset.num_periods}, "
                                         f"sample {sample.periods}")
    if sample.timesteps != T:
        raise SchemaViolation("timesteps", f"system has {T} timesteps per period, sample {sample.timesteps}")
    pos = {y: i for i, y in enumerate(sample.years)}
    blocks = []
    for p in range(P):
        total = sum(r.probability for r in repset.periods[p])
        if abs(total - 1.0) > 1e-9:
            raise ProbabilityMismatch(f"period {p + 1}: probabilities sum to {total!r}")
        for s, rep in enumerate(repset.periods[p]):
            if rep.year not in pos:
                raise SchemaViolation("year", f"representative year {rep.year} not in the sample")
            data = _default_data(system, p)
            data.update(sample.cell(pos[rep.year], p))
            blocks.append(Block(p, s, rep.probability, rep.year, data))
    return blocks


# -- builders ----------------------------------------------------------------------

def _assemble(system: EnergySystem, blocks, flags: ModelFlags, combinations: int) -> ProgramArtifacts:
    ctx = _Context(system, flags, system.time.periods)
    ctx.check_balances()
    em = _Emitter()
    fs = _first_stage_columns(em, ctx, blocks)
    bmaps = [_add_block(em, ctx, blk, fs, blk.rho) for blk in blocks]
    min_em = {blk.key: _min_emission_coefs(ctx, blk) for blk in blocks}
    storage_blocks = _first_stage_rows(em, ctx, fs, blocks, min_em)
    lp = em.b.build()
    lp.obj_offset = em.offset
    index = DecisionIndex(list(em.b.col_names), fs, bmaps)
    counts = {"rows": lp.num_rows, "columns": lp.num_cols, "blocks": len(blocks),
              "first_stage_columns": len(fs), "combinations": combinations}
    logger.info("built program: %d rows, %d columns, %d blocks", lp.num_rows, lp.num_cols, len(blocks))
    return ProgramArtifacts(lp, index, list(em.b.row_tags), {b.key: b.rho for b in blocks}, blocks,
                            storage_blocks, np.asarray(em.cat), system, flags, counts)


def build_deterministic(system: EnergySystem, series=None, flags: ModelFlags = ModelFlags(),
                        year="default") -> ProgramArtifacts:
    """Single climate year, one block per period with weight 1."""
    blocks = blocks_from_bundle(system, series, year)
    return _assemble(system, blocks, flags, 1)


def build_stochastic(system: EnergySystem, repset: RepresentativeSet, sample: ClimateSample,
                     flags: ModelFlags = ModelFlags()) -> ProgramArtifacts:
    blocks = blocks_from_repset(system, repset, sample)
    return _assemble(system, blocks, flags, count_combinations(repset))


# -- solutions ------------------------------------------------------------------------

@dataclass
class PlanSolution:
    objective: float
    capacities: dict
    contracts: dict
    storage: dict
    emissions: dict
    cost_breakdown: dict
    blocks: list
    method: str = "monolithic"
    status: str = "Optimal"
    combinations: int = 1
    info: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "objective": self.objective, "method": self.method, "status": self.status,
            "combinations": self.combinations, "capacities": self.capacities, "contracts": self.contracts,
            "storage": self.storage, "emissions": self.emissions, "cost_breakdown": self.cost_breakdown,
            "blocks": self.blocks, "info": self.info,
        }

    @classmethod
    def from_dict(cls, raw):
        return cls(raw["objective"], raw["capacities"], raw["contracts"], raw["storage"], raw["emissions"],
                   raw["cost_breakdown"], raw["blocks"], raw.get("method", "monolithic"),
                   raw.get("status", "Optimal"), int(raw.get("combinations", 1)), raw.get("info", {}))

    def save(self, path):
        Path(path).write_text(json.dumps(_clean(self.to_dict()), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        from .errors import MissingFile
        p = Path(path)
        if not p.exists():
            raise MissingFile(p)
        return cls.from_dict(json.loads(p.read_text()))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _r(v):
    # normalise -0.0 and solver noise below 1e-12 for stable output
    v = float(v)
    return 0.0 if abs(v) < 1e-12 else v


def block_summary(ctx_system: EnergySystem, flags: ModelFlags, blk: Block, bmap, x):
    """Per-block dispatch aggregates used for reporting and simulation KPIs."""
    sysm = ctx_system
    power = flags.power_carrier
    out = {"period": blk.p + 1, "scenario": blk.s, "year": blk.year, "probability": blk.rho}
    demand = unserved = curtail = 0.0
    unserved_by = {}
    for (carrier, region) in sysm.balances():
        d = float(np.sum(bmap[("demand", carrier, region)]))
        u = float(np.sum(x[bmap[("unserved", carrier, region)]]))
        demand += d
        unserved += u
        unserved_by[f"{carrier}@{region}"] = _r(u)
        if carrier == power:
            curtail += float(np.sum(x[bmap[("curtail", carrier, region)]]))
    gen = thermal = renewable = potential = 0.0
    activity = {}
    for t in sysm.techs:
        for r in t.regions:
            a = x[bmap[("act", t.id, r)]]
            activity[f"{t.id}@{r}"] = _r(a.sum())
            if power in t.outputs:
                produced = float(a.sum()) * t.outputs[power]
                gen += produced
                if t.inputs:
                    thermal += produced
                elif t.availability and not t.must_run:
                    # weather-driven output may run below its availability; the difference is curtailed
                    cap, coef = bmap[("avail", t.id, r)]
                    renewable += produced
                    potential += max(float(x[cap]) * coef * t.outputs[power], produced)
    out.update({
        "demand": _r(demand), "unserved": _r(unserved), "unserved_by_balance": unserved_by,
        "excess": _r(curtail), "curtailment": _r(potential - renewable), "generation": _r(gen),
        "thermal_generation": _r(thermal), "renewable_generation": _r(renewable),
        "renewable_potential": _r(potential), "activity": activity,
    })
    if ("emission_terms",) in bmap:
        cols, vals = bmap[("emission_terms",)]
        out["emissions"] = _r(float(np.dot(x[cols], vals)) if len(cols) else 0.0)
    else:
        out["emissions"] = 0.0
    levels = {}
    flex = {}
    for s in sysm.storages:
        if s.long_term:
            for r in s.regions:
                levels[f"{s.id}@{r}"] = [_r(v) for v in x[bmap[("lvl", s.id, r)]]]
    for c in sysm.contracts:
        flex[c.id] = _r(x[bmap[("yf", c.id)]].sum())
    out["long_term_levels"] = levels
    out["flex_imports"] = flex
    out["base_imports"] = {c.id: _r(x[bmap[("yb", c.id)]].sum()) for c in sysm.contracts}
    return out


def plan_from_values(system: EnergySystem, flags: ModelFlags, blocks, fs_value, block_results, objective,
                     breakdown, method, status="Optimal", combinations=1, info=None) -> PlanSolution:
    """Assemble a PlanSolution from first-stage values and per-block (bmap, x) results."""
    P = system.time.periods
    caps = {}
    for t in system.techs:
        caps[t.id] = {r: _r(fs_value(("cap", t.id, r))) for r in t.regions}
    for link in system.links:
        caps[f"link:{link.id}"] = _r(fs_value(("link", link.id)))
    contracts = {c.id: {"baseline": _r(fs_value(("contract", c.id))),
                        "period_volume": [_r(fs_value(("base", c.id, p))) for p in range(P)]}
                 for c in system.contracts}
    storage = {}
    by_period = {}
    for blk in blocks:
        by_period.setdefault(blk.p, []).append(blk)
    for s in system.storages:
        for r in s.regions:
            entry = {"class": s.storage_class, "power_in": _r(fs_value(("sto_in", s.id, r))),
                     "power_out": _r(fs_value(("sto_out", s.id, r))),
                     "x_size": _r(fs_value(("sto_size", s.id, r)))}
            if s.long_term:
                for k in ("sto_seas", "sto_mul", "l0", "l0_seas", "l0_mul", "leeway"):
                    entry[k] = _r(fs_value((k, s.id, r)))
                entry["seasonal_delta"] = [_r(fs_value(("dseas", s.id, r, p))) for p in range(P)]
                entry["seasonal_start"] = [_r(fs_value(("start", s.id, r, p))) for p in range(P)]
                entry["worst_delta"] = [_r(fs_value(("w", s.id, r, p))) for p in range(P)]
                entry["best_delta"] = [_r(fs_value(("b", s.id, r, p))) for p in range(P)]
                multi = flags.multi_year and s.multi_year
                entry["multi_year"] = multi
                entry["eta"] = flags.eta if flags.eta is not None else s.eta
                entry["multi_year_delta"] = [
                    [_r(fs_value(("dmul", s.id, r, p, b.s))) if multi else 0.0 for b in by_period.get(p, [])]
                    for p in range(P)]
            storage[f"{s.id}@{r}"] = entry
    emissions = {f"{blk.p},{blk.s}": res["emissions"] for blk, res in zip(blocks, block_results)}
    return PlanSolution(float(objective), caps, contracts, storage, emissions, breakdown, list(block_results),
                        method, status, combinations,
                        dict(info or {}, alpha=flags.alpha, beta=flags.beta, gamma=flags.gamma,
                             eq8_base=flags.eq8_base, multi_year=flags.multi_year))


def cost_breakdown(lp: SparseLP, categories, x):
    out = {c: 0.0 for c in CATEGORIES}
    contrib = lp.c * x
    for cat in CATEGORIES:
        out[cat] = float(contrib[categories == cat].sum())
    out["investment"] += lp.obj_offset
    return out


def extract_solution(art: ProgramArtifacts, sol: LPSolution) -> PlanSolution:
    if not sol.optimal:
        raise StatusNotOptimal(sol.status.value if hasattr(sol.status, "value") else sol.status)
    x = sol.x
    fs = art.index.first_stage

    def fs_value(key):
        return float(x[fs[key]])

    results = [block_summary(art.system, art.flags, blk, bmap, x) for blk, bmap in zip(art.blocks, art.index.blocks)]
    breakdown = cost_breakdown(art.lp, art.categories, x)
    return plan_from_values(art.system, art.flags, art.blocks, fs_value, results, sol.objective, breakdown,
                            "monolithic", combinations=art.counts["combinations"])


def balance_residuals(art: ProgramArtifacts, x) -> np.ndarray:
    """Absolute residuals of all energy-balance rows (tagged 3c equalities)."""
    lp = art.lp
    tags = np.asarray(art.row_tags)
    mask = (tags == "3c") & (lp.senses == "E")
    r = lp.A @ x - lp.b
    return np.abs(r[mask])
