"""Monte-Carlo random walk of long-term storage levels and adequacy KPIs.

Every simulated year draws one representative scenario per period,
independently, with the representatives' probabilities. The multi-year
compartment of each long-term store moves by the planned multi-year delta of
the drawn scenario; the seasonal compartment follows the planned seasonal
profile. Depletion (combined level below zero) and spill (combined level
above the installed energy capacity) are recorded, never repaired. Yearly
KPIs are read from the planned dispatch of the drawn scenarios.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import MissingDelta

logger = logging.getLogger(__name__)

KPIS = ("unserved_share", "curtailment_share", "thermal_share", "net_emissions")
PERCENTILES = (5, 50, 95)


@dataclass
class SimulationConfig:
    runs: int = 200
    years: int = 100
    seed: int = 0
    workers: int = 1
    tol: float = 1e-9          # relative tolerance before a level excursion counts as an event

    def __post_init__(self):
        if int(self.runs) < 1 or int(self.years) < 1:
            raise ValueError("runs and years must be at least 1")
        self.runs = int(self.runs)
        self.years = int(self.years)


@dataclass
class StoreWalk:
    """Planned quantities the random walk needs for one long-term store."""
    name: str
    storage: str
    region: str
    x_size: float
    l0_seas: float
    l0_mul: float
    sto_mul: float
    seasonal_end: np.ndarray        # seasonal level at the end of each period
    deltas: list                    # per period: array of multi-year deltas by scenario
    eta: float


@dataclass
class Event:
    run: int
    year: int
    period: int
    store: str
    kind: str            # "depletion" or "spill"
    level: float


@dataclass
class Trajectory:
    run: int
    scenarios: np.ndarray                           # years x periods, drawn scenario index
    seasonal: dict = field(default_factory=dict)    # store -> years x periods
    multi_year: dict = field(default_factory=dict)  # store -> years x periods

    def combined(self, store):
        return self.seasonal[store] + self.multi_year[store]


@dataclass
class KPIReport:
    samples: dict          # kpi -> runs x years
    events: list
    config: SimulationConfig
    stores: list
    metadata: dict = field(default_factory=dict)

    @property
    def depletions(self):
        return sum(1 for e in self.events if e.kind == "depletion")

    @property
    def spills(self):
        return sum(1 for e in self.events if e.kind == "spill")

    def summary(self):
        return {
            "runs": self.config.runs, "years": self.config.years, "seed": self.config.seed,
            "depletion_events": self.depletions, "spill_events": self.spills,
            "kpis": kpi_distributions(self)["kpis"], "metadata": self.metadata,
        }


# -- sampling -----------------------------------------------------------------------

def period_probabilities(repset):
    """Per-period probability vectors, normalised."""
    out = []
    for reps in repset.periods:
        rho = np.array([r.probability for r in reps], dtype=float)
        if rho.size == 0 or abs(rho.sum() - 1.0) > 1e-9:
            raise ValueError("representative probabilities must sum to one in every period")
        out.append(rho / rho.sum())
    return out


def sample_year(probabilities, rng: np.random.Generator):
    """One scenario index per period, drawn independently with the given probabilities."""
    u = rng.random(len(probabilities))
    out = np.empty(len(probabilities), dtype=int)
    for p, (rho, v) in enumerate(zip(probabilities, u)):
        cdf = np.cumsum(rho)
        out[p] = min(int(np.searchsorted(cdf, v, side="right")), len(rho) - 1)
    return out


def run_stream(seed, run):
    """Independent stream of one run, derived from the master seed and the run counter."""
    return np.random.default_rng([int(seed), int(run)])


# -- plan access ----------------------------------------------------------------------

def store_walks(plan, probabilities):
    walks = []
    P = len(probabilities)
    for name, st in sorted(plan.storage.items()):
        if st.get("class") != "long-term":
            continue
        for key in ("seasonal_delta", "multi_year_delta", "l0_seas", "l0_mul"):
            if key not in st:
                raise MissingDelta(f"{name}: plan has no {key}")
        dseas = np.asarray(st["seasonal_delta"], dtype=float)
        dmul = st["multi_year_delta"]
        if dseas.shape != (P,) or len(dmul) != P:
            raise MissingDelta(f"{name}: deltas do not cover all {P} periods")
        deltas = []
        for p in range(P):
            row = np.asarray(dmul[p], dtype=float)
            if row.shape != probabilities[p].shape:
                raise MissingDelta(f"{name}: period {p + 1} has {row.size} multi-year deltas, "
                                   f"expected {probabilities[p].size}")
            deltas.append(row)
        seasonal_end = float(st["l0_seas"]) + np.cumsum(dseas)
        storage, _, region = name.partition("@")
        walks.append(StoreWalk(name, storage, region, float(st["x_size"]), float(st["l0_seas"]),
                               float(st["l0_mul"]), float(st.get("sto_mul", 0.0)), seasonal_end, deltas,
                               float(st.get("eta", 1.0))))
    return walks


def _block_table(plan, probabilities):
    table = {}
    for b in plan.blocks:
        table[(int(b["period"]) - 1, int(b["scenario"]))] = b
    for p, rho in enumerate(probabilities):
        for s in range(rho.size):
            if (p, s) not in table:
                raise MissingDelta(f"plan has no dispatch for period {p + 1}, scenario {s}")
    return table


def _year_kpis(blocks):
    demand = sum(b["demand"] for b in blocks)
    unserved = sum(b["unserved"] for b in blocks)
    potential = sum(b.get("renewable_potential", 0.0) for b in blocks)
    curtailed = sum(b["curtailment"] for b in blocks)
    gen = sum(b["generation"] for b in blocks)
    thermal = sum(b["thermal_generation"] for b in blocks)
    return {
        "unserved_share": unserved / demand if demand > 0 else 0.0,
        "curtailment_share": curtailed / potential if potential > 0 else 0.0,
        "thermal_share": thermal / gen if gen > 0 else 0.0,
        "net_emissions": sum(b["emissions"] for b in blocks),
    }


# -- simulation -------------------------------------------------------------------------

def _simulate_run(run, cfg: SimulationConfig, probabilities, walks, blocks):
    rng = run_stream(cfg.seed, run)
    P = len(probabilities)
    draws = np.array([sample_year(probabilities, rng) for _ in range(cfg.years)], dtype=int)
    traj = Trajectory(run, draws)
    events = []
    for w in walks:
        steps = np.array([[w.deltas[p][draws[y, p]] for p in range(P)] for y in range(cfg.years)])
        multi = w.l0_mul + np.cumsum(steps.ravel()).reshape(cfg.years, P)
        seasonal = np.broadcast_to(w.seasonal_end, (cfg.years, P)).copy()
        traj.seasonal[w.name] = seasonal
        traj.multi_year[w.name] = multi
        combined = seasonal + multi
        slack = cfg.tol * max(1.0, w.x_size)
        for y, p in zip(*np.nonzero(combined < -slack)):
            events.append(Event(run, int(y) + 1, int(p) + 1, w.name, "depletion", float(combined[y, p])))
        for y, p in zip(*np.nonzero(combined > w.x_size + slack)):
            events.append(Event(run, int(y) + 1, int(p) + 1, w.name, "spill", float(combined[y, p])))
    kpis = {k: np.empty(cfg.years) for k in KPIS}
    for y in range(cfg.years):
        year = _year_kpis([blocks[(p, int(draws[y, p]))] for p in range(P)])
        for k in KPIS:
            kpis[k][y] = year[k]
    return traj, events, kpis


def simulate(plan, repset, config: Optional[SimulationConfig] = None):
    """Random-walk audit of a plan. Returns (KPIReport, list of Trajectory)."""
    cfg = config or SimulationConfig()
    probabilities = period_probabilities(repset)
    walks = store_walks(plan, probabilities)
    blocks = _block_table(plan, probabilities)

    def one(run):
        return _simulate_run(run, cfg, probabilities, walks, blocks)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, range(cfg.runs)))
    else:
        results = [one(run) for run in range(cfg.runs)]
    trajectories = [r[0] for r in results]
    events = [e for r in results for e in r[1]]
    samples = {k: np.vstack([r[2][k] for r in results]) for k in KPIS}
    info = plan.info or {}
    metadata = {
        "alpha": info.get("alpha"), "beta": info.get("beta"), "gamma": info.get("gamma"),
        "eta": {w.name: w.eta for w in walks},
        "eta_applied": "inside the planned multi-year deltas (discharge into the multi-year "
                       "compartment is scaled by eta); the walk adds deltas unchanged",
        "level_checks": "end of every period",
        "percentiles": "inverted empirical CDF: smallest sample with cumulative share >= q",
    }
    report = KPIReport(samples, events, cfg, [w.name for w in walks], metadata)
    logger.info("simulated %d runs x %d years: %d depletion, %d spill events", cfg.runs, cfg.years,
                report.depletions, report.spills)
    return report, trajectories


# -- statistics ---------------------------------------------------------------------------

def percentile(values, q):
    """Inverted empirical CDF: the smallest sample whose cumulative share reaches q percent."""
    return float(np.percentile(np.asarray(values, dtype=float), q, method="inverted_cdf"))


def _stats(values):
    values = np.asarray(values, dtype=float).ravel()
    out = {f"p{q}": percentile(values, q) for q in PERCENTILES}
    out["mean"] = float(values.mean())
    return out


def kpi_distributions(report: KPIReport, trajectories=None):
    """Percentile table per KPI and, given trajectories, per-period level distributions."""
    if not report.samples or next(iter(report.samples.values())).size == 0:
        raise ValueError("empty report")
    table = {"kpis": {k: _stats(v) for k, v in report.samples.items()}}
    if trajectories:
        levels = {}
        for store in report.stores:
            stacked = np.concatenate([t.combined(store) for t in trajectories], axis=0)
            levels[store] = [_stats(stacked[:, p]) for p in range(stacked.shape[1])]
        table["levels"] = levels
    return table


def multi_year_drift(trajectories, store, l0_mul):
    """Per-year changes of the multi-year level over all runs (flattened)."""
    out = []
    for t in trajectories:
        ends = t.multi_year[store][:, -1]
        out.append(np.diff(np.concatenate([[l0_mul], ends])))
    return np.concatenate(out)


# -- output ---------------------------------------------------------------------------------

def _num(v):
    return repr(float(v))


def write_outputs(report: KPIReport, trajectories, directory):
    """KPI and trajectory CSVs plus a summary JSON; byte-stable for identical inputs."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "kpis.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "year", "kpi", "value"])
        runs, years = next(iter(report.samples.values())).shape
        for run in range(runs):
            for y in range(years):
                for k in KPIS:
                    w.writerow([run, y + 1, k, _num(report.samples[k][run, y])])
    with open(d / "trajectories.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "year", "period", "storage", "region", "level_seasonal", "level_multiyear"])
        for t in trajectories:
            for store in sorted(t.seasonal):
                storage, _, region = store.partition("@")
                seas, multi = t.seasonal[store], t.multi_year[store]
                for y in range(seas.shape[0]):
                    for p in range(seas.shape[1]):
                        w.writerow([t.run, y + 1, p + 1, storage, region, _num(seas[y, p]), _num(multi[y, p])])
    with open(d / "events.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "year", "period", "store", "kind", "level"])
        for e in sorted(report.events, key=lambda e: (e.run, e.year, e.period, e.store, e.kind)):
            w.writerow([e.run, e.year, e.period, e.store, e.kind, _num(e.level)])
    summary = report.summary()
    summary["levels"] = kpi_distributions(report, trajectories).get("levels", {})
    (d / "simulation.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return d
