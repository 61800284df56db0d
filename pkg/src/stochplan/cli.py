"""Command-line front end: cluster -> solve -> simulate -> report.

Every command reads an optional TOML configuration (``--config``) whose
values are overridden by command-line flags, and writes into ``--out``.
Exit codes: 0 success, 1 internal error, 2 user or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import MissingFile, SchemaViolation, UserError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("stochplan")

# import-flexibility presets: (theta, flexible price as a multiple of the baseline price)
IMPORT_PRESETS = {
    "reference": (0.10, 1.20),
    "none": None,             # no import contracts at all
    "inflexible": (0.0, 1.0),
    "high": (0.30, 1.05),
}

REPRESENTATIVES = "representatives.json"
ERROR_CURVE = "error_curve.csv"
PLAN = "plan.json"
SOLVE_SUMMARY = "solve.json"
CONVERGENCE = "convergence.csv"
SIMULATION = "simulation.json"


@dataclass
class RunConfig:
    system: Optional[str] = None        # None: bundled toy
    sample: Optional[str] = None
    out: str = "out"
    n: int = 24
    n_ext: int = 0
    error_curve: list = field(default_factory=list)
    method: str = "benders"
    gap: float = 0.005
    max_iter: int = 500
    workers: int = 1
    stabilization: bool = True
    multi_year: bool = True
    imports: str = "reference"
    alpha: float = 0.01
    beta: float = 1.0
    gamma: float = 1.0
    eta: Optional[float] = None
    runs: int = 200
    years: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("monolithic", "benders"):
            raise SchemaViolation("solve.method", f"unknown method {self.method!r}")
        if self.imports not in IMPORT_PRESETS:
            raise SchemaViolation("solve.imports", f"unknown preset {self.imports!r}; "
                                  f"choose from {', '.join(IMPORT_PRESETS)}")
        if self.gap < 0:
            raise SchemaViolation("solve.gap", "must be nonnegative")
        if self.runs < 1 or self.years < 1:
            raise SchemaViolation("simulate", "runs and years must be at least 1")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise SchemaViolation("seed", "must be an unsigned 64-bit integer")

    @property
    def out_dir(self):
        return Path(self.out)


_SECTIONS = {
    "paths": ("system", "sample", "out"),
    "cluster": ("n", "n_ext", "error_curve"),
    "solve": ("method", "gap", "max_iter", "workers", "stabilization", "multi_year", "imports", "alpha", "beta",
              "gamma", "eta"),
    "simulate": ("runs", "years", "seed"),
}


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise MissingFile(p)
    try:
        raw = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise SchemaViolation(str(p), str(exc)) from None
    flat = {}
    for section, values in raw.items():
        if section == "seed" and not isinstance(values, dict):
            flat["seed"] = values
            continue
        if section not in _SECTIONS or not isinstance(values, dict):
            raise SchemaViolation(section, "unknown configuration section")
        for key, value in values.items():
            if key not in _SECTIONS[section]:
                raise SchemaViolation(f"{section}.{key}", "unknown configuration key")
            flat[key] = value
    base = p.parent
    for key in ("system", "sample", "out"):
        if key in flat and not Path(flat[key]).is_absolute():
            flat[key] = str(base / flat[key])
    return flat


def _on_off(value):
    if value in ("on", "true", "yes", "1"):
        return True
    if value in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on or off, got {value!r}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    parser = argparse.ArgumentParser(prog="stochplan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("cluster", parents=[common], help="select representative months")
    p.add_argument("--system", help="system directory (default: bundled toy)")
    p.add_argument("--sample", help="climate-sample directory (default: bundled toy sample)")
    p.add_argument("--n", type=int, help="total number of representatives, extremes included")
    p.add_argument("--n-ext", type=int, dest="n_ext", help="number of preselected extreme months (even)")
    p = sub.add_parser("solve", parents=[common], help="solve the period-scenario program")
    p.add_argument("--system", help="system directory (default: bundled toy)")
    p.add_argument("--sample", help="climate-sample directory (default: bundled toy sample)")
    p.add_argument("--method", choices=("monolithic", "benders"), help="extensive form or decomposition")
    p.add_argument("--gap", type=float, help="relative optimality gap for Benders")
    p.add_argument("--max-iter", type=int, dest="max_iter", help="Benders iteration limit")
    p.add_argument("--workers", type=int, help="threads solving sub-problems")
    p.add_argument("--stabilization", type=_on_off, metavar="on|off", help="trust-region stabilization")
    p.add_argument("--multi-year", type=_on_off, dest="multi_year", metavar="on|off",
                   help="allow scenario-dependent multi-year storage deltas")
    p.add_argument("--imports", choices=tuple(IMPORT_PRESETS), help="import-contract preset")
    p = sub.add_parser("simulate", parents=[common], help="random-walk audit of the plan")
    p.add_argument("--runs", type=int, help="independent simulation runs")
    p.add_argument("--years", type=int, help="simulated years per run")
    p = sub.add_parser("report", parents=[common], help="human-readable summary of the outputs")
    p.add_argument("--baseline", help="output directory of a comparison run (e.g. multi-year off)")
    return parser


def resolve_config(args) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise SchemaViolation("config", str(exc)) from None


# -- shared loading -----------------------------------------------------------------

def _system(cfg: RunConfig):
    from .system import load_system
    from .toy import toy_system_path
    system = load_system(cfg.system or toy_system_path())
    return apply_import_preset(system, cfg.imports)


def _sample(cfg: RunConfig):
    from .clustering import load_sample
    from .toy import toy_sample_path
    path = Path(cfg.sample) if cfg.sample else toy_sample_path()
    if not path.exists():
        raise MissingFile(path)
    return load_sample(path)


def apply_import_preset(system, preset):
    terms = IMPORT_PRESETS[preset]
    if terms is None:
        return dataclasses.replace(system, contracts=())
    theta, markup = terms
    contracts = tuple(dataclasses.replace(c, theta=theta, nu_flex=c.nu_base * markup) for c in system.contracts)
    return dataclasses.replace(system, contracts=contracts)


def _flags(cfg: RunConfig):
    from .program import ModelFlags
    return ModelFlags(multi_year=cfg.multi_year, alpha=cfg.alpha, beta=cfg.beta, gamma=cfg.gamma, eta=cfg.eta)


def _require(path: Path, what):
    if not path.exists():
        raise MissingFile(f"{path} ({what}; run the earlier pipeline step first)")
    return path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# -- commands -----------------------------------------------------------------------

def cmd_cluster(cfg: RunConfig):
    from .clustering import (
        clustering_error,
        compute_distances,
        count_combinations,
        error_curve,
        preselect_extremes,
        residual_index,
        select_representatives,
        write_error_curve,
    )
    system = _system(cfg)
    sample = _sample(cfg)
    d = compute_distances(sample, system.reference_capacity)
    index = residual_index(sample, system.reference_capacity)
    extremes = preselect_extremes(index, cfg.n_ext) if cfg.n_ext else []
    repset = select_representatives(d, cfg.n, extremes)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    repset.save(out / REPRESENTATIVES)
    ns = sorted(set(cfg.error_curve or [cfg.n]))
    write_error_curve(error_curve(d, ns, cfg.n_ext, index), out / ERROR_CURVE)
    err = clustering_error(repset, d)
    logger.info("selected %d representatives (%s per period), %d combinations, mean error %.4g", cfg.n,
                repset.counts(), count_combinations(repset), err["total"])
    return repset


def cmd_solve(cfg: RunConfig):
    from .benders import BendersConfig, decompose, iterate
    from .clustering import RepresentativeSet
    from .lp import solve_lp
    from .program import build_stochastic, extract_solution
    out = cfg.out_dir
    repset = RepresentativeSet.load(_require(out / REPRESENTATIVES, "representatives"))
    system = _system(cfg)
    sample = _sample(cfg)
    flags = _flags(cfg)
    t0 = time.perf_counter()
    summary = {"method": cfg.method, "imports": cfg.imports, "multi_year": cfg.multi_year}
    if cfg.method == "monolithic":
        art = build_stochastic(system, repset, sample, flags)
        sol = solve_lp(art.lp, backend="highs")
        plan = extract_solution(art, sol)
        summary["size"] = {"rows": art.lp.num_rows, "cols": art.lp.num_cols}
    else:
        top, subs = decompose(system, repset, sample, flags)
        bcfg = BendersConfig(gap_target=cfg.gap, max_iter=cfg.max_iter, workers=cfg.workers,
                             stabilization=cfg.stabilization)
        plan, report = iterate(top, subs, cfg.gap, cfg.max_iter, bcfg)
        report.write_csv(out / CONVERGENCE)
        summary["benders"] = report.to_dict()
    plan.save(out / PLAN)
    summary.update({"objective": plan.objective, "status": plan.status, "combinations": plan.combinations,
                    "cost_breakdown": plan.cost_breakdown, "representatives": repset.counts()})
    _write_json(out / SOLVE_SUMMARY, summary)
    logger.info("%s solve: objective %.6g (%s) in %.1f s", cfg.method, plan.objective, plan.status,
                time.perf_counter() - t0)
    return plan


def cmd_simulate(cfg: RunConfig):
    from .clustering import RepresentativeSet
    from .program import PlanSolution
    from .simulate import SimulationConfig, simulate, write_outputs
    out = cfg.out_dir
    repset = RepresentativeSet.load(_require(out / REPRESENTATIVES, "representatives"))
    plan = PlanSolution.load(_require(out / PLAN, "plan"))
    report, traj = simulate(plan, repset, SimulationConfig(cfg.runs, cfg.years, cfg.seed))
    write_outputs(report, traj, out)
    return report


def _read_json(path):
    return json.loads(Path(path).read_text())


def cmd_report(cfg: RunConfig, baseline: Optional[str] = None):
    out = cfg.out_dir
    if not out.is_dir() or not any(out.iterdir()):
        raise MissingFile(f"{out} (no outputs to report)")
    rows = []
    lines = [f"Outputs in {out}"]

    def add(key, value, label=None):
        rows.append((key, value))
        lines.append(f"  {label or key}: {value}")

    if (out / REPRESENTATIVES).exists():
        from .clustering import RepresentativeSet, count_combinations
        repset = RepresentativeSet.load(out / REPRESENTATIVES)
        lines.append("Representatives")
        add("representatives_per_period", " ".join(str(c) for c in repset.counts()))
        add("combinations", count_combinations(repset))
    if (out / SOLVE_SUMMARY).exists():
        s = _read_json(out / SOLVE_SUMMARY)
        lines.append("Plan")
        add("method", s["method"])
        add("status", s["status"])
        add("objective", _fmt(s["objective"]))
        for k, v in sorted(s["cost_breakdown"].items()):
            add(f"cost_{k}", _fmt(v))
        if "benders" in s:
            add("benders_iterations", s["benders"]["iterations"])
            add("benders_gap", _fmt(s["benders"]["gap"]))
            for k, v in sorted(s["benders"]["census"].items()):
                add(f"complicating_{k}", v)
        if baseline:
            base = Path(baseline) / SOLVE_SUMMARY
            if not base.exists():
                raise MissingFile(base)
            b = _read_json(base)
            delta = s["objective"] - b["objective"]
            add("baseline_objective", _fmt(b["objective"]))
            add("cost_delta_vs_baseline", _fmt(delta))
            add("cost_delta_share", _fmt(delta / b["objective"] if b["objective"] else math.nan))
    if (out / PLAN).exists():
        plan = _read_json(out / PLAN)
        lines.append("Long-term storage")
        for name, st in sorted(plan["storage"].items()):
            if st["class"] == "long-term":
                add(f"{name}_size", _fmt(st["x_size"]))
                add(f"{name}_multi_year_size", _fmt(st["sto_mul"]))
    if (out / SIMULATION).exists():
        sim = _read_json(out / SIMULATION)
        lines.append("Simulation")
        add("simulated_runs", sim["runs"])
        add("simulated_years", sim["years"])
        add("depletion_events", sim["depletion_events"])
        add("spill_events", sim["spill_events"])
        for k, stats in sorted(sim["kpis"].items()):
            for q, v in sorted(stats.items()):
                add(f"{k}_{q}", _fmt(v))
    if not rows:
        raise MissingFile(f"{out} (no recognised outputs)")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        w.writerows(rows)
    sys.stdout.write(text)
    return rows


def _fmt(v):
    return f"{float(v):.10g}"


# -- entry point ----------------------------------------------------------------------

def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "cluster":
            cmd_cluster(cfg)
        elif args.command == "solve":
            cmd_solve(cfg)
        elif args.command == "simulate":
            cmd_simulate(cfg)
        else:
            cmd_report(cfg, args.baseline)
    except UserError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except Exception as exc:  # noqa: BLE001 - the exit code contract needs a catch-all
        logger.debug("internal error", exc_info=True)
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
