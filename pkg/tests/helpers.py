"""Small hand-built systems and samples shared by the test modules."""

import numpy as np

from stochplan.clustering import ClimateSample, Representative, RepresentativeSet, SeriesSpec
from stochplan.system import (
    Carrier,
    ConversionTech,
    DemandSeries,
    EmissionPolicy,
    EnergySystem,
    ImportContract,
    Region,
    StorageTech,
    TimeGrid,
)


def make_system(P=2, T=4, techs=(), storages=(), contracts=(), demand=None, series=None, cap=None,
                carriers=(("elec", 1),), region="r", unserved_cost=13000.0):
    """One-region system; ``demand`` maps carrier -> P*T array (or scalar)."""
    series = dict(series or {})
    demands = []
    for carrier, values in (demand or {}).items():
        name = f"{carrier}_demand"
        series[name] = np.broadcast_to(np.asarray(values, dtype=float), (P * T,)).copy()
        demands.append(DemandSeries(carrier, region, name, unserved_cost))
    return EnergySystem(
        time=TimeGrid(P, T),
        carriers=tuple(Carrier(c, r) for c, r in sorted(carriers)),
        regions=(Region(region, tuple(sorted(c for c, _ in carriers))),),
        techs=tuple(sorted(techs, key=lambda t: t.id)),
        storages=tuple(sorted(storages, key=lambda s: s.id)),
        links=(),
        contracts=tuple(contracts),
        demands=tuple(demands),
        emission=EmissionPolicy(cap),
        series={k: np.asarray(v, dtype=float) for k, v in sorted(series.items())},
        reference_capacity={},
        unserved_cost=unserved_cost,
    )


def generator(id="gen", invest=10.0, var=1.0, out="elec", **kw):
    return ConversionTech(id=id, inputs=kw.pop("inputs", {}), outputs={out: 1.0}, invest_cost=invest,
                          var_cost=var, regions=("r",), **kw)


def long_term_store(id="cavern", carrier="elec", multi_year=True, eta=1.0, power=1.0, energy=1.0):
    return StorageTech(id=id, carrier=carrier, storage_class="long-term", invest_cost_power=power,
                       invest_cost_energy=energy, multi_year=multi_year, eta=eta, regions=("r",))


def contract(theta=0.5, nu_base=50.0, nu_flex=55.0, ef=0.0, carrier="fuel"):
    return ImportContract("imp", carrier, "r", theta=theta, nu_base=nu_base, nu_flex=nu_flex,
                          emission_factor=ef)


def make_sample(P, T, cf, years=None):
    """Climate sample of one supply series ``cf`` (array years x P x T) for region "r"."""
    cf = np.asarray(cf, dtype=float)
    years = tuple(range(2001, 2001 + cf.shape[0])) if years is None else tuple(years)
    spec = SeriesSpec("cf", "factor", "supply", None, ("r",))
    return ClimateSample(years, P, T, (spec,), {("cf", "r"): cf})


def repset_from(choice, years):
    """``choice[p]`` = list of (year, probability) representatives for period p."""
    periods = []
    for reps in choice:
        periods.append([Representative(y, float(rho), False, (y,)) for y, rho in reps])
    return RepresentativeSet(periods, tuple(years), sum(len(r) for r in choice), 0, 0.0)
