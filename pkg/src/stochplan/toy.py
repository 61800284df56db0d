"""Synthetic three-region system and climate sample shipped with the package.

``write_toy(root)`` regenerates the bundled ``toyEU`` system directory and the
``toyEU_sample`` climate-sample directory from a fixed seed. Periods run from
October to September: the wind-dominated system fills its seasonal stores in
winter and drains them over summer, so they are naturally low at the year
boundary.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import tomli_w

from .system import write_series_csv

SEED = 20240601
PERIODS = 12
HOURS = 72
YEARS = tuple(range(2001, 2009))
REGIONS = ("central", "north", "south")

# period index 0..11 -> month-of-year angle; period 0 is October, +1 in January
_WINTERNESS = np.array([math.cos(2 * math.pi * (p - 3) / 12) for p in range(PERIODS)])


def data_dir() -> Path:
    return Path(__file__).parent / "data"


def toy_system_path() -> Path:
    return data_dir() / "toyEU"


def toy_sample_path() -> Path:
    return data_dir() / "toyEU_sample"


def _winter(p):
    # 1 in deep winter, 0 in high summer
    return 0.5 * (1.0 + _WINTERNESS[p])


def _sample_series(rng):
    """Return {(name, region): array (years, periods, hours)}."""
    n_years = len(YEARS)
    hours = np.arange(HOURS)
    out = {}
    # common weather regime per (year, period): calm-cold anomalies couple wind and heat
    regime = rng.normal(0.0, 1.0, size=(n_years, PERIODS))
    for region in REGIONS:
        wind_base = {"north": 0.42, "central": 0.30, "south": 0.22}[region]
        pv_base = {"north": 0.10, "central": 0.14, "south": 0.20}[region]
        heat_base = {"north": 40.0, "central": 70.0, "south": 25.0}[region]
        elec_base = {"north": 45.0, "central": 90.0, "south": 55.0}[region]
        local = rng.normal(0.0, 0.5, size=(n_years, PERIODS))
        wind = np.zeros((n_years, PERIODS, HOURS))
        pv = np.zeros_like(wind)
        heat = np.zeros_like(wind)
        elec = np.zeros_like(wind)
        for i in range(n_years):
            for p in range(PERIODS):
                w = _winter(p)
                anomaly = 0.8 * regime[i, p] + 0.6 * local[i, p]
                level = wind_base * (0.75 + 0.5 * w) * math.exp(0.30 * anomaly * (0.4 + w))
                noise = np.zeros(HOURS)
                e = rng.normal(0.0, 0.25, size=HOURS)
                for t in range(1, HOURS):
                    noise[t] = 0.9 * noise[t - 1] + e[t]
                wind[i, p] = np.clip(level * np.exp(noise - noise.mean()), 0.0, 1.0)
                cloud = float(np.clip(1.0 + 0.15 * rng.normal(), 0.6, 1.3))
                day = np.clip(np.sin(2 * math.pi * ((hours % 24) - 6) / 24), 0.0, None)
                pv[i, p] = np.clip(pv_base * (1.6 - 1.2 * w) * cloud * day * 2.4, 0.0, 1.0)
                cold = 1.0 + 0.25 * max(-anomaly, -1.5) * w
                heat[i, p] = heat_base * (0.15 + 1.7 * w) * cold * (1.0 + 0.1 * np.cos(2 * math.pi * hours / 24))
                elec[i, p] = elec_base * (1.0 + 0.1 * w) * (1.0 + 0.15 * np.sin(2 * math.pi * (hours - 9) / 24))
        out[("wind_cf", region)] = wind
        out[("pv_cf", region)] = pv
        out[("heat_demand", region)] = heat
        out[("elec_demand", region)] = elec
        # must-run heat-pump profile follows the heat demand shape (peak-normalized per region)
        peak = float(heat.max())
        out[("heat_profile", region)] = heat / peak
    return out


def _manifest():
    inf = "inf"
    return {
        "unserved_cost": 13000.0,
        "time": {"periods": PERIODS, "timesteps_per_period": HOURS},
        "emission": {"cap": 0.0},
        "carrier": [
            {"id": "elec", "resolution": 2, "unit": "MWh"},
            {"id": "fuel", "resolution": 72, "unit": "MWh"},
            {"id": "h2", "resolution": 24, "unit": "MWh"},
            {"id": "heat", "resolution": 4, "unit": "MWh"},
        ],
        "region": [
            {"id": "central", "carriers": ["elec", "fuel", "h2", "heat"]},
            {"id": "north", "carriers": ["elec", "h2", "heat"]},
            {"id": "south", "carriers": ["elec", "fuel", "heat"]},
        ],
        "tech": [
            {"id": "boiler", "regions": ["central", "south"], "inputs": {"fuel": 1.1}, "outputs": {"heat": 1.0},
             "invest_cost": 500.0, "var_cost": 0.5, "capacity_max": inf},
            {"id": "dac", "regions": ["south"], "inputs": {"elec": 1.5}, "outputs": {},
             "invest_cost": 9000.0, "var_cost": 5.0, "emission_factor": -1.0, "capacity_max": inf},
            {"id": "electrolyzer", "regions": ["central", "north"], "inputs": {"elec": 1.43}, "outputs": {"h2": 1.0},
             "invest_cost": 3500.0, "var_cost": 0.0},
            {"id": "fuel_cell", "regions": ["central", "north"], "inputs": {"h2": 2.0}, "outputs": {"elec": 1.0},
             "invest_cost": 4000.0, "var_cost": 0.0},
            {"id": "heat_pump", "regions": ["central", "north", "south"], "inputs": {"elec": 0.33},
             "outputs": {"heat": 1.0}, "invest_cost": 6000.0, "var_cost": 0.0, "must_run": True,
             "availability": "heat_profile"},
            {"id": "ocgt", "regions": ["central", "south"], "inputs": {"fuel": 2.5}, "outputs": {"elec": 1.0},
             "invest_cost": 3000.0, "var_cost": 1.0, "existing": 20.0},
            {"id": "pv", "regions": ["central", "south"], "inputs": {}, "outputs": {"elec": 1.0},
             "invest_cost": 2800.0, "var_cost": 0.0, "availability": "pv_cf", "capacity_max": 600.0},
            {"id": "synfuel", "regions": ["central"], "inputs": {"h2": 1.4}, "outputs": {"fuel": 1.0},
             "invest_cost": 5000.0, "var_cost": 1.0},
            {"id": "wind", "regions": ["central", "north"], "inputs": {}, "outputs": {"elec": 1.0},
             "invest_cost": 7000.0, "var_cost": 0.0, "availability": "wind_cf", "capacity_max": 800.0},
        ],
        "storage": [
            {"id": "battery", "carrier": "elec", "class": "short-term", "regions": ["central", "north", "south"],
             "eff_charge": 0.95, "eff_discharge": 0.95, "invest_cost_power": 500.0, "invest_cost_energy": 1200.0,
             "multi_year": False},
            {"id": "fuel_tank", "carrier": "fuel", "class": "long-term", "regions": ["central"],
             "eff_charge": 1.0, "eff_discharge": 1.0, "invest_cost_power": 20.0, "invest_cost_energy": 1.0,
             "multi_year": True, "eta": 0.999},
            {"id": "h2_cavern", "carrier": "h2", "class": "long-term", "regions": ["north"],
             "eff_charge": 0.98, "eff_discharge": 0.98, "invest_cost_power": 300.0, "invest_cost_energy": 6.0,
             "multi_year": True, "eta": 0.999},
        ],
        "link": [
            {"id": "elec_cn", "carrier": "elec", "from": "central", "to": "north", "loss": 0.03,
             "invest_cost": 900.0, "var_cost": 0.1, "existing": 20.0},
            {"id": "elec_cs", "carrier": "elec", "from": "central", "to": "south", "loss": 0.03,
             "invest_cost": 900.0, "var_cost": 0.1, "existing": 20.0},
            {"id": "fuel_cs", "carrier": "fuel", "from": "central", "to": "south", "loss": 0.0,
             "invest_cost": 50.0, "var_cost": 0.5},
            {"id": "h2_cn", "carrier": "h2", "from": "central", "to": "north", "loss": 0.01,
             "invest_cost": 600.0, "var_cost": 0.0},
        ],
        "contract": [
            {"id": "fossil_fuel", "carrier": "fuel", "region": "central", "theta": 0.1, "nu_base": 50.0,
             "nu_flex": 60.0, "emission_factor": 0.25},
        ],
        "demand": [
            {"carrier": "elec", "region": r, "series": "elec_demand", "unserved_cost": 13000.0} for r in REGIONS
        ] + [
            {"carrier": "heat", "region": r, "series": "heat_demand", "unserved_cost": 13000.0} for r in REGIONS
        ] + [
            {"carrier": "fuel", "region": "central", "series": "fuel_demand", "unserved_cost": 13000.0},
        ],
        "reference_capacity": {
            "heat_pump": {"central": 100.0, "north": 60.0, "south": 40.0},
            "pv": {"central": 250.0, "south": 300.0},
            "wind": {"central": 250.0, "north": 400.0},
        },
    }


SAMPLE_SERIES = (
    # name, aggregation kind, residual role, capacity-weighting tech (None: weight 1), regions
    ("elec_demand", "demand", "demand", None, REGIONS),
    ("heat_demand", "demand", "demand", None, REGIONS),
    ("heat_profile", "factor", "demand", "heat_pump", REGIONS),
    ("pv_cf", "factor", "supply", "pv", ("central", "south")),
    ("wind_cf", "factor", "supply", "wind", ("central", "north")),
)
_SAMPLE_REGIONS = {name: regions for name, _, _, _, regions in SAMPLE_SERIES}


def _sample_manifest():
    return {
        "years": list(YEARS),
        "periods": PERIODS,
        "timesteps_per_period": HOURS,
        "series": [
            {"name": name, "kind": kind, "role": role, "metric": name != "heat_demand",
             "regions": list(regions), **({"tech": tech} if tech else {})}
            for name, kind, role, tech, regions in SAMPLE_SERIES
        ],
    }


def write_toy(root=None, seed: int = SEED) -> tuple:
    """Write ``toyEU`` and ``toyEU_sample`` below ``root`` (default: package data)."""
    root = Path(root) if root is not None else data_dir()
    sys_dir = root / "toyEU"
    smp_dir = root / "toyEU_sample"
    (sys_dir / "series").mkdir(parents=True, exist_ok=True)
    smp_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    data = _sample_series(rng)
    (sys_dir / "system.toml").write_text(tomli_w.dumps(_manifest()), encoding="utf-8")
    # default single-year series: the first sample year
    for (name, region), arr in sorted(data.items()):
        if region not in _SAMPLE_REGIONS[name]:
            continue
        write_series_csv(sys_dir / "series" / f"{name}__{region}.csv", np.round(arr[0].reshape(-1), 6))
    write_series_csv(sys_dir / "series" / "fuel_demand.csv", np.full(PERIODS * HOURS, 25.0))
    (smp_dir / "sample.toml").write_text(tomli_w.dumps(_sample_manifest()), encoding="utf-8")
    for (name, region), arr in sorted(data.items()):
        if region not in _SAMPLE_REGIONS[name]:
            continue
        with open(smp_dir / f"{name}__{region}.csv", "w", newline="\n") as fh:
            fh.write("year,period,timestep,value\n")
            for i, year in enumerate(YEARS):
                for p in range(PERIODS):
                    for t in range(HOURS):
                        fh.write(f"{year},{p + 1},{t},{round(float(arr[i, p, t]), 6)!r}\n")
    return sys_dir, smp_dir


if __name__ == "__main__":  # pragma: no cover
    print(*write_toy(), sep="\n")
