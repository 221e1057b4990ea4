"""Command-line entry point: fit, solve, evaluate, simulate, export-curve.

Workflows write plain CSV/JSON artifacts into an output directory so the
stages can be chained::

    quaropt fit records.csv --population population.csv --out-dir work/
    quaropt solve --fit-dir work/ --epsilon 0.05 --out-dir work/
    quaropt evaluate --rule work/rule.csv --population population.csv \
        --records records.csv --out-dir work/
    quaropt simulate --scenario 1 --n 10000 --reps 200 --seed 7 --out-dir sim/

All commands are deterministic under ``--seed``; files are written via a
temp-and-rename so readers never observe partial output.

Exit codes: 0 success, 1 input/schema errors, 2 fit non-convergence
(artifacts still written), 3 too many unimodality violations in solve
(artifacts still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from quaropt.baselines import EvaluationReport, average_quarantine_duration, empirical_escape, write_evaluation_csv
from quaropt.data_pipeline import (
    RecordSchemaError,
    incubation_records,
    infected_features,
    load_records,
    population_weights,
    product_density,
    reweight_levels,
)
from quaropt.density_estimation import (
    DensityEstimate,
    FeaturePoint,
    FeatureSpace,
    fit_kernel_density,
    read_density_csv,
    write_density_csv,
)
from quaropt.incubation_model import FitOptions, FitReport, fit_mle, interval_probability
from quaropt.rule_solver import (
    optimal_rule,
    ratio_curve,
    read_rule_csv,
    write_rule_csv,
)
from quaropt.simulation import PipelineOptions, run_replications, scenario

EXIT_OK = 0
EXIT_SCHEMA = 1
EXIT_NO_CONVERGENCE = 2
EXIT_CONDITION_VIOLATIONS = 3


@dataclass(frozen=True)
class RunConfig:
    """Defaults shared by all commands; a JSON config file can override them
    and explicit CLI flags override the file."""

    age_min: int = 11
    age_max: int = 80
    y_max: float = 60.0
    epsilon: float = 0.05
    bandwidth: float | str = "auto"
    rounding: bool = True
    seed: int = 0
    condition1_max_fraction: float = 0.25

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        cfg = cls()
        if path is None:
            return cfg
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        unknown = set(data) - set(cfg.__dataclass_fields__)
        if unknown:
            raise RecordSchemaError(f"{path}: unknown config keys {sorted(unknown)}")
        return replace(cfg, **data)

    def merged(self, args: argparse.Namespace) -> "RunConfig":
        updates = {}
        for key in ("age_min", "age_max", "y_max", "epsilon", "seed"):
            value = getattr(args, key, None)
            if value is not None:
                updates[key] = value
        if getattr(args, "bandwidth", None) is not None:
            bw = args.bandwidth
            updates["bandwidth"] = bw if bw == "auto" else float(bw)
        if getattr(args, "round", None) is not None:
            updates["rounding"] = args.round
        return replace(self, **updates)


@contextmanager
def _atomic(path: Path):
    tmp = path.with_name(path.name + ".tmp")
    yield tmp
    os.replace(tmp, path)


def _write_text(path: Path, text: str) -> None:
    with _atomic(path) as tmp:
        tmp.write_text(text, encoding="utf-8")


def _parse_level_shares(text: str) -> dict[str, float]:
    shares: dict[str, float] = {}
    for part in text.split(","):
        if not part.strip():
            continue
        key, _, value = part.partition("=")
        shares[key.strip()] = float(value)
    if not shares:
        raise ValueError(f"could not parse level shares from {text!r}")
    return shares


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--seed", type=int, help="random seed (default 0)")
    parser.add_argument("--epsilon", type=float, help="escape probability bound")
    parser.add_argument("--y-max", dest="y_max", type=float, help="duration search cap in days")
    parser.add_argument("--age-min", dest="age_min", type=int, help="lower age support bound")
    parser.add_argument("--age-max", dest="age_max", type=int, help="upper age support bound")
    parser.add_argument(
        "--round",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="round durations to whole days in metrics (default on)",
    )
    parser.add_argument("--out-dir", default=".", help="directory for output artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quaropt",
        description="Individualized quarantine durations by density-ratio thresholding",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="estimate densities and the incubation model")
    p_fit.add_argument("records", help="records.csv (age,risk_level,infected,z)")
    p_fit.add_argument("--population", help="population.csv supplying f0 when no uninfected rows")
    p_fit.add_argument("--bandwidth", help='kernel bandwidth in years or "auto"')
    p_fit.add_argument(
        "--f0-level-shares",
        help='risk-level shares for f0 when records carry levels, e.g. "high=0.1,low=0.9"',
    )
    p_fit.add_argument(
        "--f1-level-shares",
        help="override the infected risk-level proportions (external case table)",
    )
    p_fit.add_argument(
        "--ceiling-likelihood",
        choices=["on", "off"],
        default="on",
        help="fit the interval likelihood on ceiled Z (on) or a continuous one (off)",
    )
    _add_common(p_fit)

    p_solve = sub.add_parser("solve", help="solve the threshold and emit the duration rule")
    p_solve.add_argument("--fit-dir", required=True, help="directory with fit artifacts")
    p_solve.add_argument("--weight", help="weight.csv (risk_level,age,weight) cost of a day")
    _add_common(p_solve)

    p_eval = sub.add_parser("evaluate", help="average duration and escape of rules")
    p_eval.add_argument("--rule", action="append", required=True, help="rule.csv (repeatable)")
    p_eval.add_argument("--population", required=True, help="population.csv for the AQD")
    p_eval.add_argument("--records", required=True, help="records.csv with infected rows for the EP")
    p_eval.add_argument(
        "--level-shares",
        help="risk-level shares of the population when rules carry levels",
    )
    _add_common(p_eval)

    p_sim = sub.add_parser("simulate", help="replicate the pipeline on a simulation scenario")
    p_sim.add_argument("--scenario", type=int, required=True, choices=[1, 2, 3, 4])
    p_sim.add_argument("--n", type=int, default=10000, help="sample size per replication")
    p_sim.add_argument("--reps", type=int, default=200, help="number of replications")
    p_sim.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p_sim.add_argument(
        "--ceiling-likelihood",
        choices=["on", "off"],
        default="on",
        help="fit on ceiled Z (on) or continuous Y (off)",
    )
    _add_common(p_sim)

    p_curve = sub.add_parser("export-curve", help="density-ratio curve at one feature point")
    p_curve.add_argument("--fit-dir", required=True, help="directory with fit artifacts")
    p_curve.add_argument("--age", type=int, required=True)
    p_curve.add_argument("--risk-level", default="none")
    p_curve.add_argument("--points", type=int, default=512, help="grid resolution")
    _add_common(p_curve)
    return parser


def _space_of_levels(levels, cfg: RunConfig) -> FeatureSpace:
    return FeatureSpace(tuple(levels), cfg.age_min, cfg.age_max)


def _fit_artifacts(out: Path):
    return {
        "report": out / "fit_report.json",
        "f1": out / "f1_density.csv",
        "f0": out / "f0_density.csv",
        "features": out / "infected_features.csv",
        "intervals": out / "interval_fit.csv",
    }


def cmd_fit(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    loaded = load_records(args.records, cfg.age_min, cfg.age_max)
    if loaded.dropped_out_of_support:
        print(f"dropped {loaded.dropped_out_of_support} rows with out-of-support ages")
    records = loaded.records
    infected = [r for r in records if r.infected]
    uninfected = [r for r in records if not r.infected]
    if not infected:
        raise RecordSchemaError(f"{args.records}: no infected rows; nothing to fit")

    levels = sorted({r.risk_level for r in records})
    space = _space_of_levels(levels, cfg)
    f1 = fit_kernel_density([r.feature() for r in infected], space, cfg.bandwidth)
    if args.f1_level_shares:
        f1 = reweight_levels(f1, _parse_level_shares(args.f1_level_shares))

    if uninfected:
        f0 = fit_kernel_density([r.feature() for r in uninfected], space, cfg.bandwidth)
    elif args.population:
        age_density = population_weights(args.population, cfg.age_min, cfg.age_max)
        if levels == ["none"]:
            f0 = age_density
        elif args.f0_level_shares:
            f0 = product_density(age_density, _parse_level_shares(args.f0_level_shares))
        else:
            raise RecordSchemaError(
                "records carry risk levels; pass --f0-level-shares to build f0 "
                "from the age-only population table"
            )
    else:
        raise RecordSchemaError(
            "no uninfected rows and no --population table; f0 cannot be estimated"
        )

    likelihood = "ceiled" if args.ceiling_likelihood == "on" else "continuous"
    fit = fit_mle(
        incubation_records(records),
        options=FitOptions(likelihood=likelihood, age_support=(cfg.age_min, cfg.age_max)),
    )

    paths = _fit_artifacts(out)
    _write_text(paths["report"], fit.to_json())
    with _atomic(paths["f1"]) as tmp:
        write_density_csv(f1, tmp)
    with _atomic(paths["f0"]) as tmp:
        write_density_csv(f0, tmp)
    with _atomic(paths["features"]) as tmp:
        _write_feature_counts(tmp, [r.feature() for r in infected])
    with _atomic(paths["intervals"]) as tmp:
        _write_interval_fit(tmp, fit, records)
    print(f"fit: loglik={fit.log_likelihood:.6f} converged={fit.converged} -> {out}")
    if not fit.converged:
        print("fit did not converge; report written anyway", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _write_feature_counts(path, features: list[FeaturePoint]) -> None:
    counts: dict[FeaturePoint, int] = {}
    for x in features:
        counts[x] = counts.get(x, 0) + 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["risk_level", "age", "count"])
        for x in sorted(counts):
            writer.writerow([x.risk_level, x.age, counts[x]])


def _write_interval_fit(path, fit: FitReport, records) -> None:
    """Observed vs fitted ceiled-duration frequencies (model-check data)."""
    pairs = [(r.age, r.ceiled_incubation) for r in records if r.infected and r.ceiled_incubation]
    ages = np.array([a for a, _ in pairs], dtype=float)
    zs = np.array([z for _, z in pairs])
    z_max = int(zs.max())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z", "observed_frequency", "fitted_probability"])
        for z in range(1, z_max + 1):
            observed = float(np.mean(zs == z))
            fitted = float(np.mean(interval_probability(fit.model, ages, z)))
            writer.writerow([z, repr(observed), repr(fitted)])


def _read_feature_counts(path) -> tuple[list[FeaturePoint], np.ndarray]:
    feats: list[FeaturePoint] = []
    counts: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            feats.append(FeaturePoint(row["risk_level"], int(row["age"])))
            counts.append(float(row["count"]))
    return feats, np.array(counts)


def _read_weight_csv(path) -> dict[FeaturePoint, float]:
    out: dict[FeaturePoint, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[FeaturePoint(row["risk_level"], int(row["age"]))] = float(row["weight"])
    return out


def cmd_solve(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fit_dir = Path(args.fit_dir)
    paths = _fit_artifacts(fit_dir)
    fit = FitReport.from_json(paths["report"].read_text(encoding="utf-8"))
    f1 = read_density_csv(paths["f1"])
    f0 = read_density_csv(paths["f0"])
    feats, counts = _read_feature_counts(paths["features"])
    weight = _read_weight_csv(args.weight) if args.weight else None

    rule, solution = optimal_rule(
        cfg.epsilon,
        f1,
        f0,
        fit.model,
        feats,
        weight=weight,
        y_max=cfg.y_max,
        infected_weights=counts,
    )

    with _atomic(out / "rule.csv") as tmp:
        write_rule_csv(rule, tmp)
    _write_text(out / "solution.json", solution.to_json())
    for note in solution.warnings:
        print(f"warning: {note}", file=sys.stderr)
    print(
        f"solve: c0={solution.c0:.8g} c_star={solution.c_star:.8g} "
        f"escape={solution.achieved_escape:.6f} fallback={solution.fallback_used}"
    )
    if (
        solution.n_support
        and solution.n_condition_violations / solution.n_support > cfg.condition1_max_fraction
    ):
        print(
            f"condition violations on {solution.n_condition_violations}/{solution.n_support} "
            f"support points exceed the configured fraction {cfg.condition1_max_fraction}",
            file=sys.stderr,
        )
        return EXIT_CONDITION_VIOLATIONS
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    loaded = load_records(args.records, cfg.age_min, cfg.age_max)
    infected = [
        (r.feature(), r.ceiled_incubation)
        for r in loaded.records
        if r.infected and r.ceiled_incubation is not None
    ]
    if not infected:
        raise RecordSchemaError(f"{args.records}: no infected rows with z; cannot evaluate EP")
    age_density = population_weights(args.population, cfg.age_min, cfg.age_max)
    reports = []
    for rule_path in args.rule:
        rule = read_rule_csv(rule_path, provenance=Path(rule_path).stem)
        levels = sorted({p.risk_level for p in rule.points})
        if levels == ["none"]:
            pop = age_density
        else:
            if not args.level_shares:
                raise RecordSchemaError(
                    "rules carry risk levels; pass --level-shares for the population"
                )
            pop = product_density(age_density, _parse_level_shares(args.level_shares))
        reports.append(
            EvaluationReport(
                method=rule.provenance,
                aqd=average_quarantine_duration(rule, pop, cfg.rounding),
                ep=empirical_escape(rule, infected, cfg.rounding),
                n_infected=len(infected),
                rounded=cfg.rounding,
            )
        )
    with _atomic(out / "evaluation.csv") as tmp:
        write_evaluation_csv(reports, tmp)
    for r in reports:
        print(f"{r.method}: AQD={r.aqd:.2f} EP={100 * r.ep:.1f}%")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = scenario(args.scenario)
    options = PipelineOptions(
        y_max=cfg.y_max,
        bandwidth=cfg.bandwidth,
        round_durations=cfg.rounding,
        likelihood="ceiled" if args.ceiling_likelihood == "on" else "continuous",
    )
    summary = run_replications(
        spec, args.n, cfg.epsilon, args.reps, cfg.seed, options=options, jobs=args.jobs
    )
    with _atomic(out / "table1.csv") as tmp:
        summary.write_table_csv(tmp)
    with _atomic(out / "duration_curves.csv") as tmp:
        summary.write_duration_curves_csv(tmp)
    for method, s in summary.method_stats().items():
        print(
            f"scenario {spec.scenario_id} {method}: "
            f"AQD={s['aqd_mean']:.2f} EP={100 * s['ep_mean']:.1f}%"
        )
    if summary.failures:
        print(f"{len(summary.failures)} replications failed", file=sys.stderr)
    return EXIT_OK


def cmd_export_curve(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fit_dir = Path(args.fit_dir)
    paths = _fit_artifacts(fit_dir)
    fit = FitReport.from_json(paths["report"].read_text(encoding="utf-8"))
    f1 = read_density_csv(paths["f1"])
    f0 = read_density_csv(paths["f0"])
    x = FeaturePoint(args.risk_level, args.age)
    curve = ratio_curve(x, fit.model, f1, f0, y_max=cfg.y_max)
    ys = np.linspace(cfg.y_max / args.points, cfg.y_max, args.points)
    values = curve.value(ys)
    name = f"curve_{args.risk_level}_{args.age}.csv"
    with _atomic(out / name) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["y_days", "density_ratio"])
            for y, v in zip(ys, values):
                writer.writerow([repr(float(y)), repr(float(v))])
    print(f"curve at {x}: mode={curve.mode:.4f} peak={curve.peak:.6g} -> {out / name}")
    return EXIT_OK


_COMMANDS = {
    "fit": cmd_fit,
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "export-curve": cmd_export_curve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config).merged(args)
        return _COMMANDS[args.command](args, cfg)
    except RecordSchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ValueError, ZeroDivisionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
