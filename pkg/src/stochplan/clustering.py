"""Representative-period selection from a multi-year climate sample.

Pipeline: period totals per metric -> pairwise distance tensor -> extreme
preselection on residual demand -> exact p-median selection (binary program,
branch-and-bound) -> probability weights.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import (
    EmptyAssignment,
    Infeasible,
    LengthMismatch,
    MissingCapacity,
    MissingFile,
    OddExtremeCount,
    SchemaViolation,
    SolverFailure,
)
from .lp import LPBuilder, solve_mip

logger = logging.getLogger(__name__)

SAMPLE_MANIFEST = "sample.toml"


# -- climate sample -----------------------------------------------------------

@dataclass(frozen=True)
class SeriesSpec:
    name: str
    kind: str = "factor"          # aggregation: "factor" (mean) or "demand" (sum)
    role: str = "supply"          # sign in the residual index: supply or demand
    tech: Optional[str] = None    # capacity weighting; None means weight 1
    regions: tuple = ()
    metric: bool = True           # used as a clustering metric


@dataclass
class ClimateSample:
    """Per (year, period) time series for every (series, region).

    ``data[(name, region)]`` has shape ``(years, periods, timesteps)``.
    """

    years: tuple
    periods: int
    timesteps: int
    specs: tuple
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (len(self.years), self.periods, self.timesteps)
        for key, arr in self.data.items():
            if arr.shape != shape:
                raise LengthMismatch(f"series {key} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise SchemaViolation(f"{key[0]}__{key[1]}", "non-finite value")
        for spec in self.specs:
            for region in spec.regions:
                if (spec.name, region) not in self.data:
                    raise MissingFile(f"{spec.name}__{region}.csv")

    @property
    def metrics(self):
        return [s for s in self.specs if s.metric]

    def year_bundle(self, i: int) -> dict:
        """Flat one-year series ``{"name__region": array(P*T)}`` for year index ``i``."""
        return {f"{n}__{r}": arr[i].reshape(-1) for (n, r), arr in sorted(self.data.items())}

    def cell(self, i: int, p: int) -> dict:
        """``{"name__region": array(T)}`` for year index ``i`` and period ``p``."""
        return {f"{n}__{r}": arr[i, p] for (n, r), arr in sorted(self.data.items())}


def load_sample(path) -> ClimateSample:
    root = Path(path)
    manifest = root / SAMPLE_MANIFEST
    if not manifest.exists():
        raise MissingFile(manifest)
    try:
        raw = tomllib.loads(manifest.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise SchemaViolation(SAMPLE_MANIFEST, str(exc)) from exc
    years = tuple(int(y) for y in raw.get("years", []))
    if not years:
        raise SchemaViolation("years", "sample needs at least one year")
    P = int(raw["periods"])
    T = int(raw["timesteps_per_period"])
    specs = []
    for s in raw.get("series", []):
        kind = s.get("kind", "factor")
        role = s.get("role", "supply")
        if kind not in ("factor", "demand"):
            raise SchemaViolation(f"series[{s.get('name')}].kind", f"unknown kind {kind!r}")
        if role not in ("supply", "demand"):
            raise SchemaViolation(f"series[{s.get('name')}].role", f"unknown role {role!r}")
        specs.append(SeriesSpec(str(s["name"]), kind, role, s.get("tech"),
                                tuple(sorted(s.get("regions", []))), bool(s.get("metric", True))))
    specs.sort(key=lambda s: s.name)
    year_pos = {y: k for k, y in enumerate(years)}
    data = {}
    for spec in specs:
        for region in spec.regions:
            f = root / f"{spec.name}__{region}.csv"
            if not f.exists():
                raise MissingFile(f)
            arr = np.full((len(years), P, T), np.nan)
            with open(f, newline="") as fh:
                reader = csv.reader(fh)
                if next(reader, None) != ["year", "period", "timestep", "value"]:
                    raise SchemaViolation(f.name, "header must be 'year,period,timestep,value'")
                for row in reader:
                    y, p, t, v = int(row[0]), int(row[1]), int(row[2]), float(row[3])
                    if y not in year_pos or not (1 <= p <= P) or not (0 <= t < T):
                        raise SchemaViolation(f.name, f"cell ({y},{p},{t}) outside the sample grid")
                    arr[year_pos[y], p - 1, t] = v
            if np.isnan(arr).any():
                raise LengthMismatch(f"{f.name}: not every (year, period, timestep) cell is populated")
            data[(spec.name, region)] = arr
    return ClimateSample(years, P, T, tuple(specs), data)


# -- distances ----------------------------------------------------------------

def _weight(capacities, tech, region):
    if tech is None:
        return 1.0
    if tech not in capacities:
        raise MissingCapacity(tech)
    cap = capacities[tech]
    if isinstance(cap, dict):
        if region not in cap:
            raise MissingCapacity(f"{tech}@{region}")
        return float(cap[region])
    return float(cap)


def period_totals(sample: ClimateSample, capacities, specs=None) -> np.ndarray:
    """M[i, p, c]: capacity-weighted period total of each metric, summed over regions."""
    specs = sample.metrics if specs is None else specs
    M = np.zeros((len(sample.years), sample.periods, len(specs)))
    for c, spec in enumerate(specs):
        for region in spec.regions:
            w = _weight(capacities, spec.tech, region)
            M[:, :, c] += w * sample.data[(spec.name, region)].sum(axis=2)
    return M


@dataclass
class DistanceTensor:
    """d[i, j, p, c] = |M(i,p,c) - M(j,p,c)| (or any symmetric, zero-diagonal data)."""

    d: np.ndarray
    years: tuple
    metrics: tuple

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        if self.d.ndim != 4 or self.d.shape[0] != self.d.shape[1]:
            raise SchemaViolation("d", f"expected shape (I, I, P, C), got {self.d.shape}")
        if len(self.years) != self.d.shape[0] or len(self.metrics) != self.d.shape[3]:
            raise SchemaViolation("d", "labels do not match tensor shape")
        if np.any(self.d < 0) or not np.allclose(self.d, self.d.transpose(1, 0, 2, 3)):
            raise SchemaViolation("d", "distances must be nonnegative and symmetric")
        if np.any(np.diagonal(self.d, axis1=0, axis2=1) != 0):
            raise SchemaViolation("d", "self-distance must be zero")

    @property
    def num_years(self):
        return self.d.shape[0]

    @property
    def num_periods(self):
        return self.d.shape[2]

    @classmethod
    def from_totals(cls, M, years=None, metrics=None):
        M = np.asarray(M, dtype=float)
        d = np.abs(M[:, None, :, :] - M[None, :, :, :])
        years = tuple(range(M.shape[0])) if years is None else tuple(years)
        metrics = tuple(f"m{c}" for c in range(M.shape[2])) if metrics is None else tuple(metrics)
        return cls(d, years, metrics)


def compute_distances(sample: ClimateSample, reference_capacities) -> DistanceTensor:
    specs = sample.metrics
    M = period_totals(sample, reference_capacities, specs)
    return DistanceTensor.from_totals(M, sample.years, tuple(s.name for s in specs))


# -- extreme preselection -----------------------------------------------------

@dataclass
class ResidualDemandIndex:
    """values[(i, p)] = renewable supply minus demand over the period (MWh)."""

    values: dict

    def __post_init__(self):
        for k, v in self.values.items():
            if not math.isfinite(v):
                raise SchemaViolation(str(k), "residual demand must be finite")


def residual_index(sample: ClimateSample, reference_capacities) -> ResidualDemandIndex:
    specs = sample.metrics
    M = period_totals(sample, reference_capacities, specs)
    sign = np.array([1.0 if s.role == "supply" else -1.0 for s in specs])
    R = (M * sign).sum(axis=2)
    return ResidualDemandIndex({(i, p): float(R[i, p]) for i in range(R.shape[0]) for p in range(R.shape[1])})


def _tie_key(key):
    # (year index, period) cells tie-break on earlier period, then earlier year
    if isinstance(key, tuple) and len(key) == 2:
        return (key[1], key[0])
    return key


def preselect_extremes(index, n_ext: int) -> list:
    """n_ext/2 highest-residual cells (first) followed by n_ext/2 lowest-residual cells."""
    values = index.values if isinstance(index, ResidualDemandIndex) else dict(index)
    if n_ext < 0 or n_ext % 2:
        raise OddExtremeCount(f"n_ext must be a nonnegative even number, got {n_ext}")
    if n_ext > len(values):
        raise Infeasible(f"cannot preselect {n_ext} extremes from {len(values)} cells")
    half = n_ext // 2
    high = sorted(values, key=lambda k: (-values[k], _tie_key(k)))[:half]
    rest = [k for k in values if k not in set(high)]
    low = sorted(rest, key=lambda k: (values[k], _tie_key(k)))[:half]
    return high + low


# -- representative sets ------------------------------------------------------

@dataclass(frozen=True)
class Representative:
    year: int                 # label
    probability: float
    extreme: bool
    represents: tuple         # year labels


@dataclass
class RepresentativeSet:
    periods: list             # per period: list[Representative] sorted by year
    years: tuple              # sample year labels
    n: int = 0
    n_ext: int = 0
    objective: float = 0.0

    def counts(self):
        return [len(reps) for reps in self.periods]

    @property
    def num_periods(self):
        return len(self.periods)

    def assignment(self, p):
        """Map year label -> representative year label for period ``p``."""
        out = {}
        for rep in self.periods[p]:
            for y in rep.represents:
                out[y] = rep.year
        return out

    def probabilities(self, p):
        return np.array([r.probability for r in self.periods[p]])

    def to_dict(self):
        return {
            "n": self.n,
            "n_ext": self.n_ext,
            "objective": self.objective,
            "sample_years": list(self.years),
            "extreme_rescaling": "proportional",
            "periods": [
                {"period": p + 1,
                 "representatives": [
                     {"year": r.year, "probability": r.probability, "extreme": r.extreme,
                      "represents": list(r.represents)} for r in reps]}
                for p, reps in enumerate(self.periods)
            ],
        }

    @classmethod
    def from_dict(cls, raw):
        periods = []
        for entry in sorted(raw["periods"], key=lambda e: e["period"]):
            periods.append([Representative(int(r["year"]), float(r["probability"]), bool(r["extreme"]),
                                           tuple(int(y) for y in r["represents"]))
                            for r in entry["representatives"]])
        return cls(periods, tuple(raw.get("sample_years", [])), int(raw.get("n", 0)),
                   int(raw.get("n_ext", 0)), float(raw.get("objective", 0.0)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        p = Path(path)
        if not p.exists():
            raise MissingFile(p)
        return cls.from_dict(json.loads(p.read_text()))

    @classmethod
    def single(cls, year, periods):
        """One scenario per period, all taken from ``year``."""
        rep = Representative(year, 1.0, False, (year,))
        return cls([[rep] for _ in range(periods)], (year,), periods, 0, 0.0)


def _build_pmedian(D, candidates, target):
    """Binary program over u[i,p], v[i,j,p] restricted to per-period candidate years."""
    b = LPBuilder()
    u_col = {}
    v_col = {}
    for p, cands in enumerate(candidates):
        for i in cands:
            u_col[(i, p)] = b.add_col(f"u[{i},{p}]", 0.0, 1.0, 0.0, integer=True)
    for p, cands in enumerate(candidates):
        for i in cands:
            for j in cands:
                v_col[(i, j, p)] = b.add_col(f"v[{i},{j},{p}]", 0.0, 1.0, float(D[i, j, p]), integer=True)
    for (i, j, p), col in v_col.items():
        b.add_row([col, u_col[(i, p)]], [1.0, -1.0], "L", 0.0, "16b")
    for p, cands in enumerate(candidates):
        for j in cands:
            b.add_row([v_col[(i, j, p)] for i in cands], [1.0] * len(cands), "E", 1.0, "16c")
    b.add_row(list(u_col.values()), [1.0] * len(u_col), "E", float(target), "16d")
    return b, u_col, v_col


def select_representatives(d: DistanceTensor, n: int, extremes=(), backend: str = "auto",
                           node_limit: int = 100_000) -> RepresentativeSet:
    """Exact optimum of the representative-selection binary program.

    Extreme cells ``(i, p)`` are removed from candidates and represented sets
    and returned as self-representing entries. Among optimal selections the
    lexicographically smallest sorted (year, period) selection list is returned.
    Probabilities are filled by :func:`compute_probabilities`.
    """
    I, P = d.num_years, d.num_periods
    extremes = [tuple(map(int, e)) for e in extremes]
    if len(set(extremes)) != len(extremes):
        raise SchemaViolation("extremes", "duplicate extreme cell")
    ext_set = set(extremes)
    candidates = [[i for i in range(I) if (i, p) not in ext_set] for p in range(P)]
    target = n - len(extremes)
    needed = sum(1 for c in candidates if c)
    available = sum(len(c) for c in candidates)
    if target < needed:
        raise Infeasible(f"n={n} leaves {target} representatives for {needed} periods")
    if target > available:
        raise Infeasible(f"n={n} exceeds the {available + len(extremes)} available cells")
    D = d.d.sum(axis=3)
    b, u_col, v_col = _build_pmedian(D, candidates, target)
    lp = b.build()
    sol = solve_mip(lp, gap=0.0, node_limit=node_limit, backend=backend)
    if not sol.optimal:
        raise SolverFailure(f"selection program ended with status {sol.status.value}")
    z_star = sol.objective

    # lexicographic tie-break: greedily keep the earliest (year, period) cells
    tol = 1e-7 * max(1.0, abs(z_star))
    cols = np.arange(lp.num_cols)
    bound_cols = [v_col[k] for k in sorted(v_col)]
    bound_vals = [float(lp.c[c]) for c in bound_cols]
    b.add_row(bound_cols, bound_vals, "L", z_star + tol, "bound")
    probe_lp = b.build()
    lb = probe_lp.lb.copy()
    ub = probe_lp.ub.copy()
    x = sol.x
    chosen = 0
    for key in sorted(u_col):  # (year, period)
        col = u_col[key]
        if chosen == target:
            ub[col] = 0.0
            continue
        if x[col] > 0.5:
            lb[col] = 1.0
            chosen += 1
            continue
        trial_lb = lb.copy()
        trial_lb[col] = 1.0
        probe = solve_mip(probe_lp.with_bounds(trial_lb, ub), gap=0.0, node_limit=node_limit, backend=backend)
        if probe.optimal:
            lb = trial_lb
            x = probe.x[cols]
            chosen += 1
        else:
            ub[col] = 0.0
    selected = {k for k, col in u_col.items() if x[col] > 0.5}

    periods = []
    objective = 0.0
    for p in range(P):
        reps = {}
        sel = sorted(i for (i, q) in selected if q == p)
        for j in candidates[p]:
            # a selected month represents itself; others go to the nearest (earlier year on ties)
            best = j if j in sel else min(sel, key=lambda i: (D[i, j, p], i))
            reps.setdefault(best, []).append(j)
            objective += D[best, j, p]
        entries = [Representative(d.years[i], 0.0, False, tuple(d.years[j] for j in sorted(js)))
                   for i, js in reps.items()]
        entries += [Representative(d.years[i], 0.0, True, (d.years[i],)) for (i, q) in extremes if q == p]
        entries.sort(key=lambda r: (r.year, r.extreme))
        periods.append(entries)
    if abs(objective - z_star) > 1e-6 * max(1.0, abs(z_star)):
        raise SolverFailure(f"assignment objective {objective} differs from optimum {z_star}")
    logger.info("selected %d representatives (objective %.6g, %d B&B nodes)", n, objective, sol.nodes)
    return compute_probabilities(RepresentativeSet(periods, tuple(d.years), n, len(extremes), objective), I)


def compute_probabilities(repset: RepresentativeSet, sample_size: int) -> RepresentativeSet:
    """Share of represented months; extremes get 1/I, the rest is rescaled by (1 - k_p/I)."""
    I = int(sample_size)
    periods = []
    for p, reps in enumerate(repset.periods):
        if not reps:
            raise EmptyAssignment(f"period {p + 1} has no representative")
        k_p = sum(1 for r in reps if r.extreme)
        normal = [r for r in reps if not r.extreme]
        total = sum(len(r.represents) for r in normal)
        if any(len(r.represents) == 0 for r in normal) or (normal and total == 0):
            raise EmptyAssignment(f"period {p + 1} has a representative without assigned months")
        scale = 1.0 - k_p / I
        out = []
        for r in reps:
            rho = 1.0 / I if r.extreme else len(r.represents) / total * scale
            out.append(replace(r, probability=rho))
        if not normal:
            s = sum(r.probability for r in out)
            out = [replace(r, probability=r.probability / s) for r in out]
        periods.append(out)
    return replace(repset, periods=periods)


def clustering_error(repset: RepresentativeSet, d, capacities=None) -> dict:
    """Mean over (j, p) of the distance to the assigned representative, per metric and total."""
    if isinstance(d, ClimateSample):
        d = compute_distances(d, capacities)
    pos = {y: k for k, y in enumerate(d.years)}
    I, P, C = d.num_years, d.num_periods, len(d.metrics)
    acc = np.zeros(C)
    for p in range(P):
        assign = repset.assignment(p)
        for j_label in d.years:
            rep = assign.get(j_label, j_label)
            acc += d.d[pos[rep], pos[j_label], p, :]
    per_metric = acc / (I * P)
    out = {"total": float(per_metric.mean()) if C else 0.0}
    out.update({m: float(v) for m, v in zip(d.metrics, per_metric)})
    return out


def count_combinations(repset) -> int:
    """Number of implied period-scenario paths, an exact integer."""
    counts = repset.counts() if isinstance(repset, RepresentativeSet) else list(repset)
    return math.prod(int(c) for c in counts)


def error_curve(d: DistanceTensor, ns, n_ext: int = 0, index: Optional[ResidualDemandIndex] = None,
                backend: str = "auto") -> list:
    """Rows ``(n, n_ext, metric, error)`` for each feasible n."""
    extremes = preselect_extremes(index, n_ext) if (index is not None and n_ext) else []
    rows = []
    for n in ns:
        try:
            rs = select_representatives(d, n, extremes, backend=backend)
        except Infeasible:
            continue
        err = clustering_error(rs, d)
        for metric in ("total",) + tuple(d.metrics):
            rows.append((n, n_ext, metric, err[metric]))
    return rows


def write_error_curve(rows, path):
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "n_ext", "metric", "error"])
        for n, n_ext, metric, err in rows:
            w.writerow([n, n_ext, metric, repr(float(err))])
