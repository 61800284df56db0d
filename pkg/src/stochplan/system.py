"""Planning instance: domain types, manifest ingestion, validation.

A system directory holds ``system.toml`` plus ``series/<name>.csv`` files with
header ``timestep,value`` covering one year of base timesteps. Series are
looked up per region as ``<name>__<region>`` first, then ``<name>``.
"""

from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import DanglingReference, LengthMismatch, MissingFile, SchemaViolation

DEFAULT_UNSERVED_COST = 13_000.0
MANIFEST = "system.toml"


@dataclass(frozen=True)
class Carrier:
    id: str
    resolution: int = 1
    unit: str = "MWh"


@dataclass(frozen=True)
class Region:
    id: str
    carriers: tuple = ()


@dataclass(frozen=True)
class ConversionTech:
    id: str
    inputs: dict
    outputs: dict
    invest_cost: float = 0.0
    var_cost: float = 0.0
    capacity_min: float = 0.0
    capacity_max: float = math.inf
    existing: float = 0.0
    emission_factor: float = 0.0
    must_run: bool = False
    availability: Optional[str] = None
    regions: tuple = ()

    def carriers(self):
        return sorted(set(self.inputs) | set(self.outputs))


@dataclass(frozen=True)
class StorageTech:
    id: str
    carrier: str
    storage_class: str = "short-term"
    eff_charge: float = 1.0
    eff_discharge: float = 1.0
    invest_cost_power: float = 0.0
    invest_cost_energy: float = 0.0
    multi_year: bool = False
    eta: float = 0.999
    inflow: Optional[str] = None
    power_max: float = math.inf
    energy_max: float = math.inf
    existing_power: float = 0.0
    existing_energy: float = 0.0
    regions: tuple = ()

    @property
    def long_term(self):
        return self.storage_class == "long-term"


@dataclass(frozen=True)
class ExchangeLink:
    id: str
    carrier: str
    source: str
    target: str
    loss: float = 0.0
    invest_cost: float = 0.0
    var_cost: float = 0.0
    capacity_max: float = math.inf
    existing: float = 0.0


@dataclass(frozen=True)
class ImportContract:
    id: str
    carrier: str
    region: str
    theta: float = 0.0
    nu_base: float = 0.0
    nu_flex: float = 0.0
    emission_factor: float = 0.0
    capacity_max: float = math.inf


@dataclass(frozen=True)
class DemandSeries:
    carrier: str
    region: str
    series: str
    unserved_cost: float = DEFAULT_UNSERVED_COST


@dataclass(frozen=True)
class EmissionPolicy:
    cap: Optional[float] = None  # None: no limit


@dataclass(frozen=True)
class TimeGrid:
    periods: int
    timesteps_per_period: int

    @property
    def hours_per_year(self):
        return self.periods * self.timesteps_per_period


@dataclass(frozen=True)
class EnergySystem:
    time: TimeGrid
    carriers: tuple
    regions: tuple
    techs: tuple
    storages: tuple
    links: tuple
    contracts: tuple
    demands: tuple
    emission: EmissionPolicy
    series: dict = field(default_factory=dict)
    reference_capacity: dict = field(default_factory=dict)
    unserved_cost: float = DEFAULT_UNSERVED_COST

    def carrier(self, cid) -> Carrier:
        for c in self.carriers:
            if c.id == cid:
                return c
        raise DanglingReference(cid, "carriers")

    def balances(self):
        """(carrier, region) pairs with an energy balance, in canonical order."""
        return [(c, r.id) for r in self.regions for c in r.carriers]

    def lookup_series(self, name, region=None):
        """Key of the series used for ``name`` in ``region`` (regional file first)."""
        if region is not None and f"{name}__{region}" in self.series:
            return f"{name}__{region}"
        if name in self.series:
            return name
        raise DanglingReference(name if region is None else f"{name}__{region}", "series")

    def demand_for(self, carrier, region):
        for d in self.demands:
            if d.carrier == carrier and d.region == region:
                return d
        return None

    def unserved_cost_for(self, carrier, region):
        d = self.demand_for(carrier, region)
        return d.unserved_cost if d is not None else self.unserved_cost


@dataclass(frozen=True)
class Violation:
    entity: str
    rule: str
    detail: str = ""


# -- series helpers ---------------------------------------------------------

def aggregate_series(series, factor: int, kind: str = "demand") -> np.ndarray:
    """Coarsen a base-timestep series by ``factor``.

    ``kind="demand"`` sums each block (energy), ``kind="factor"`` averages it.
    """
    a = np.asarray(series, dtype=float)
    factor = int(factor)
    if factor < 1 or a.size % factor:
        raise LengthMismatch(f"length {a.size} not divisible by {factor}")
    blocks = a.reshape(-1, factor)
    if kind == "demand":
        return blocks.sum(axis=1)
    if kind == "factor":
        return blocks.mean(axis=1)
    raise ValueError(f"unknown series kind {kind!r}")


def read_series_csv(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise MissingFile(p)
    with open(p, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["timestep", "value"]:
            raise SchemaViolation(str(p), "header must be 'timestep,value'")
        rows = [(int(t), float(v)) for t, v in reader]
    rows.sort()
    if [t for t, _ in rows] != list(range(len(rows))):
        raise SchemaViolation(str(p), "timesteps must be 0..n-1")
    return np.array([v for _, v in rows])


def write_series_csv(path, values) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("timestep,value\n")
        for t, v in enumerate(values):
            fh.write(f"{t},{float(v)!r}\n")


# -- manifest ingestion -----------------------------------------------------

def _num(d, key, default, where):
    v = d.get(key, default)
    if isinstance(v, str) and v in ("inf", "+inf"):
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaViolation(f"{where}.{key}", f"expected a number, got {v!r}")
    return float(v)


def _req(d, key, where):
    if key not in d:
        raise SchemaViolation(f"{where}.{key}", "missing required field")
    return d[key]


def _coefs(d, where):
    if not isinstance(d, dict):
        raise SchemaViolation(where, "expected a carrier -> coefficient table")
    return {str(k): float(v) for k, v in sorted(d.items())}


def _parse(raw: dict, series: dict) -> EnergySystem:
    t = _req(raw, "time", "system")
    time = TimeGrid(int(_req(t, "periods", "time")), int(_req(t, "timesteps_per_period", "time")))
    carriers = tuple(sorted(
        (Carrier(str(_req(c, "id", "carrier")), int(c.get("resolution", 1)), str(c.get("unit", "MWh")))
         for c in raw.get("carrier", [])), key=lambda c: c.id))
    regions = tuple(sorted(
        (Region(str(_req(r, "id", "region")), tuple(sorted(r.get("carriers", []))))
         for r in raw.get("region", [])), key=lambda r: r.id))
    techs = []
    for d in raw.get("tech", []):
        tid = str(_req(d, "id", "tech"))
        w = f"tech[{tid}]"
        techs.append(ConversionTech(
            id=tid, inputs=_coefs(d.get("inputs", {}), w + ".inputs"),
            outputs=_coefs(d.get("outputs", {}), w + ".outputs"),
            invest_cost=_num(d, "invest_cost", 0.0, w), var_cost=_num(d, "var_cost", 0.0, w),
            capacity_min=_num(d, "capacity_min", 0.0, w), capacity_max=_num(d, "capacity_max", math.inf, w),
            existing=_num(d, "existing", 0.0, w), emission_factor=_num(d, "emission_factor", 0.0, w),
            must_run=bool(d.get("must_run", False)), availability=d.get("availability"),
            regions=tuple(sorted(_req(d, "regions", w)))))
    storages = []
    for d in raw.get("storage", []):
        sid = str(_req(d, "id", "storage"))
        w = f"storage[{sid}]"
        cls = d.get("class", "short-term")
        if cls not in ("short-term", "long-term"):
            raise SchemaViolation(w + ".class", f"unknown storage class {cls!r}")
        storages.append(StorageTech(
            id=sid, carrier=str(_req(d, "carrier", w)), storage_class=cls,
            eff_charge=_num(d, "eff_charge", 1.0, w), eff_discharge=_num(d, "eff_discharge", 1.0, w),
            invest_cost_power=_num(d, "invest_cost_power", 0.0, w),
            invest_cost_energy=_num(d, "invest_cost_energy", 0.0, w),
            multi_year=bool(d.get("multi_year", False)), eta=_num(d, "eta", 0.999, w),
            inflow=d.get("inflow"), power_max=_num(d, "power_max", math.inf, w),
            energy_max=_num(d, "energy_max", math.inf, w),
            existing_power=_num(d, "existing_power", 0.0, w),
            existing_energy=_num(d, "existing_energy", 0.0, w),
            regions=tuple(sorted(_req(d, "regions", w)))))
    links = []
    for d in raw.get("link", []):
        lid = str(_req(d, "id", "link"))
        w = f"link[{lid}]"
        links.append(ExchangeLink(
            id=lid, carrier=str(_req(d, "carrier", w)), source=str(_req(d, "from", w)),
            target=str(_req(d, "to", w)), loss=_num(d, "loss", 0.0, w),
            invest_cost=_num(d, "invest_cost", 0.0, w), var_cost=_num(d, "var_cost", 0.0, w),
            capacity_max=_num(d, "capacity_max", math.inf, w), existing=_num(d, "existing", 0.0, w)))
    contracts = []
    for d in raw.get("contract", []):
        cid = str(_req(d, "id", "contract"))
        w = f"contract[{cid}]"
        contracts.append(ImportContract(
            id=cid, carrier=str(_req(d, "carrier", w)), region=str(_req(d, "region", w)),
            theta=_num(d, "theta", 0.0, w), nu_base=_num(d, "nu_base", 0.0, w),
            nu_flex=_num(d, "nu_flex", 0.0, w), emission_factor=_num(d, "emission_factor", 0.0, w),
            capacity_max=_num(d, "capacity_max", math.inf, w)))
    unserved_default = float(raw.get("unserved_cost", DEFAULT_UNSERVED_COST))
    demands = []
    for d in raw.get("demand", []):
        w = "demand"
        demands.append(DemandSeries(
            carrier=str(_req(d, "carrier", w)), region=str(_req(d, "region", w)),
            series=str(_req(d, "series", w)),
            unserved_cost=_num(d, "unserved_cost", unserved_default, w)))
    em = raw.get("emission", {})
    cap = em.get("cap")
    emission = EmissionPolicy(None if cap is None else float(cap))
    refcap = {str(k): {str(r): float(v) for r, v in sorted(vals.items())}
              for k, vals in sorted(raw.get("reference_capacity", {}).items())}
    return EnergySystem(
        time=time, carriers=carriers, regions=regions,
        techs=tuple(sorted(techs, key=lambda x: x.id)),
        storages=tuple(sorted(storages, key=lambda x: x.id)),
        links=tuple(sorted(links, key=lambda x: x.id)),
        contracts=tuple(sorted(contracts, key=lambda x: x.id)),
        demands=tuple(sorted(demands, key=lambda x: (x.carrier, x.region))),
        emission=emission, series=dict(sorted(series.items())), reference_capacity=refcap,
        unserved_cost=unserved_default)


def _referenced_series(system: EnergySystem):
    names = []
    for d in system.demands:
        names.append((d.series, d.region))
    for t in system.techs:
        if t.availability:
            names.extend((t.availability, r) for r in t.regions)
    for s in system.storages:
        if s.inflow:
            names.extend((s.inflow, r) for r in s.regions)
    return names


def _check_references(system: EnergySystem):
    carriers = {c.id for c in system.carriers}
    regions = {r.id for r in system.regions}
    techs = {t.id for t in system.techs}
    for r in system.regions:
        for c in r.carriers:
            if c not in carriers:
                raise DanglingReference(c, f"region {r.id}")
    for t in system.techs:
        for c in t.carriers():
            if c not in carriers:
                raise DanglingReference(c, f"tech {t.id}")
        for r in t.regions:
            if r not in regions:
                raise DanglingReference(r, f"tech {t.id}")
    for s in system.storages:
        if s.carrier not in carriers:
            raise DanglingReference(s.carrier, f"storage {s.id}")
        for r in s.regions:
            if r not in regions:
                raise DanglingReference(r, f"storage {s.id}")
    for link in system.links:
        if link.carrier not in carriers:
            raise DanglingReference(link.carrier, f"link {link.id}")
        for r in (link.source, link.target):
            if r not in regions:
                raise DanglingReference(r, f"link {link.id}")
    for c in system.contracts:
        if c.carrier not in carriers:
            raise DanglingReference(c.carrier, f"contract {c.id}")
        if c.region not in regions:
            raise DanglingReference(c.region, f"contract {c.id}")
    for d in system.demands:
        if d.carrier not in carriers:
            raise DanglingReference(d.carrier, "demand")
        if d.region not in regions:
            raise DanglingReference(d.region, "demand")
    for tid, caps in system.reference_capacity.items():
        if tid not in techs:
            raise DanglingReference(tid, "reference_capacity")
        for r in caps:
            if r not in regions:
                raise DanglingReference(r, f"reference_capacity.{tid}")


def load_system(path) -> EnergySystem:
    """Read a system directory into a cross-referenced, canonically ordered EnergySystem."""
    root = Path(path)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise MissingFile(manifest)
    try:
        raw = tomllib.loads(manifest.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise SchemaViolation(MANIFEST, str(exc)) from exc
    series = {}
    sdir = root / "series"
    if sdir.is_dir():
        for f in sorted(sdir.glob("*.csv")):
            arr = read_series_csv(f)
            arr.setflags(write=False)
            series[f.stem] = arr
    system = _parse(raw, series)
    _check_references(system)
    for name, region in _referenced_series(system):
        try:
            system.lookup_series(name, region)
        except DanglingReference:
            raise MissingFile(sdir / f"{name}__{region}.csv") from None
    year = system.time.hours_per_year
    for key, arr in system.series.items():
        if arr.size != year:
            raise LengthMismatch(f"series {key} has {arr.size} timesteps, expected {year}")
    return system


def _tomlnum(v):
    return "inf" if v == math.inf else v


def system_to_dict(system: EnergySystem) -> dict:
    """Canonical manifest dictionary (the inverse of ``load_system`` parsing)."""
    out = {
        "unserved_cost": system.unserved_cost,
        "time": {"periods": system.time.periods, "timesteps_per_period": system.time.timesteps_per_period},
        "emission": {} if system.emission.cap is None else {"cap": system.emission.cap},
        "carrier": [{"id": c.id, "resolution": c.resolution, "unit": c.unit} for c in system.carriers],
        "region": [{"id": r.id, "carriers": list(r.carriers)} for r in system.regions],
        "tech": [],
        "storage": [],
        "link": [],
        "contract": [],
        "demand": [],
        "reference_capacity": {k: dict(v) for k, v in system.reference_capacity.items()},
    }
    for t in system.techs:
        d = {"id": t.id, "regions": list(t.regions), "inputs": dict(t.inputs), "outputs": dict(t.outputs),
             "invest_cost": t.invest_cost, "var_cost": t.var_cost, "capacity_min": t.capacity_min,
             "capacity_max": _tomlnum(t.capacity_max), "existing": t.existing,
             "emission_factor": t.emission_factor, "must_run": t.must_run}
        if t.availability:
            d["availability"] = t.availability
        out["tech"].append(d)
    for s in system.storages:
        d = {"id": s.id, "carrier": s.carrier, "class": s.storage_class, "regions": list(s.regions),
             "eff_charge": s.eff_charge, "eff_discharge": s.eff_discharge,
             "invest_cost_power": s.invest_cost_power, "invest_cost_energy": s.invest_cost_energy,
             "multi_year": s.multi_year, "eta": s.eta, "power_max": _tomlnum(s.power_max),
             "energy_max": _tomlnum(s.energy_max), "existing_power": s.existing_power,
             "existing_energy": s.existing_energy}
        if s.inflow:
            d["inflow"] = s.inflow
        out["storage"].append(d)
    for link in system.links:
        out["link"].append({"id": link.id, "carrier": link.carrier, "from": link.source, "to": link.target,
                            "loss": link.loss, "invest_cost": link.invest_cost, "var_cost": link.var_cost,
                            "capacity_max": _tomlnum(link.capacity_max), "existing": link.existing})
    for c in system.contracts:
        out["contract"].append({"id": c.id, "carrier": c.carrier, "region": c.region, "theta": c.theta,
                                "nu_base": c.nu_base, "nu_flex": c.nu_flex,
                                "emission_factor": c.emission_factor, "capacity_max": _tomlnum(c.capacity_max)})
    for d in system.demands:
        out["demand"].append({"carrier": d.carrier, "region": d.region, "series": d.series,
                              "unserved_cost": d.unserved_cost})
    return out


def save_system(system: EnergySystem, path) -> None:
    root = Path(path)
    (root / "series").mkdir(parents=True, exist_ok=True)
    (root / MANIFEST).write_text(tomli_w.dumps(system_to_dict(system)), encoding="utf-8")
    for name, arr in system.series.items():
        write_series_csv(root / "series" / f"{name}.csv", arr)


def systems_equal(a: EnergySystem, b: EnergySystem) -> bool:
    if system_to_dict(a) != system_to_dict(b):
        return False
    if a.series.keys() != b.series.keys():
        return False
    return all(np.array_equal(a.series[k], b.series[k]) for k in a.series)


# -- validation ---------------------------------------------------------------

def validate(system: EnergySystem) -> list:
    """Check type invariants; returns violations in a stable order (never raises)."""
    out = []

    def add(entity, rule, detail=""):
        out.append(Violation(entity, rule, detail))

    seen = {}
    for kind, items in (("carrier", system.carriers), ("region", system.regions), ("tech", system.techs),
                        ("storage", system.storages), ("link", system.links), ("contract", system.contracts)):
        for it in items:
            key = (kind, it.id)
            if key in seen:
                add(it.id, "DuplicateId", kind)
            seen[key] = True
    T = system.time.timesteps_per_period
    if system.time.periods < 1 or T < 1:
        add("time", "EmptyTimeGrid")
    for c in system.carriers:
        if c.resolution < 1 or T % c.resolution:
            add(c.id, "ResolutionMismatch", f"{c.resolution} does not divide {T}")
    res = {c.id: c.resolution for c in system.carriers}
    for t in system.techs:
        if not any(v != 0 for v in list(t.inputs.values()) + list(t.outputs.values())):
            add(t.id, "EmptyTechnology")
        if t.invest_cost < 0 or t.var_cost < 0:
            add(t.id, "NegativeCost")
        if t.capacity_min > t.capacity_max:
            add(t.id, "CapacityBoundsInverted")
        rs = [res[c] for c in t.carriers() if c in res]
        if rs and any(r % min(rs) for r in rs):
            add(t.id, "ResolutionMismatch", "carrier resolutions must nest")
        if t.must_run and not t.outputs:
            add(t.id, "MustRunWithoutOutput")
    for s in system.storages:
        for eff_name in ("eff_charge", "eff_discharge"):
            eff = getattr(s, eff_name)
            if not (0 < eff <= 1):
                add(s.id, "EfficiencyOutOfRange", f"{eff_name}={eff}")
        if not (0 < s.eta <= 1):
            add(s.id, "EfficiencyOutOfRange", f"eta={s.eta}")
        if s.multi_year and not s.long_term:
            add(s.id, "ShortTermMultiYear")
        if s.invest_cost_power < 0 or s.invest_cost_energy < 0:
            add(s.id, "NegativeCost")
    for link in system.links:
        if link.source == link.target:
            add(link.id, "SelfLink")
        if not (0 <= link.loss < 1):
            add(link.id, "LossOutOfRange")
        if link.invest_cost < 0 or link.var_cost < 0:
            add(link.id, "NegativeCost")
    for c in system.contracts:
        if c.theta < 0:
            add(c.id, "NegativeFlexibility")
        if c.nu_flex < c.nu_base:
            add(c.id, "ContractPriceInversion")
        if c.nu_base < 0:
            add(c.id, "NegativeCost")
    region_carriers = {r.id: set(r.carriers) for r in system.regions}
    for d in system.demands:
        key = f"{d.carrier}@{d.region}"
        if d.carrier not in region_carriers.get(d.region, set()):
            add(key, "DemandWithoutBalance")
        try:
            arr = system.series[system.lookup_series(d.series, d.region)]
            if np.any(arr < 0):
                add(key, "NegativeDemand")
        except DanglingReference:
            add(key, "MissingSeries", d.series)
        if not math.isfinite(d.unserved_cost) and not _has_supply(system, d.carrier, d.region):
            add(key, "UnsuppliedCarrier")
        if d.unserved_cost < 0:
            add(key, "NegativeCost")
    if system.emission.cap is not None and not math.isfinite(system.emission.cap):
        add("emission", "NonFiniteCap")
    return out


def _has_supply(system, carrier, region):
    if any(carrier in t.outputs and region in t.regions for t in system.techs):
        return True
    if any(c.carrier == carrier and c.region == region for c in system.contracts):
        return True
    return any(link.carrier == carrier and region in (link.source, link.target) for link in system.links)
