"""Ingestion of real-world-shaped inputs and the missing-incubation workflow.

Three fixed CSV schemas (UTF-8, dot decimals):

* ``records.csv``   header ``age,risk_level,infected,z``; one row per person,
  ``z`` is the ceiled incubation period and must be present exactly for
  infected rows (it may be left empty in imputation inputs);
* ``population.csv`` header ``age,weight`` with counts or proportions;
* ``cases.csv``     header ``country,new_cases_14d,population`` feeding the
  current-infection-index risk grouping.

Rows with ages outside the configured support are dropped and counted, not
errors; anything structurally wrong reports its line number.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from quaropt.density_estimation import (
    RISK_LEVELS,
    DensityEstimate,
    FeaturePoint,
    FeatureSpace,
    fit_kernel_density,
)
from quaropt.incubation_model import ConditionalIncubationModel

__all__ = [
    "QuarantineRecord",
    "CountryCaseCount",
    "RecordSchemaError",
    "LoadResult",
    "load_records",
    "incubation_records",
    "infected_features",
    "compute_cii",
    "risk_group",
    "load_cases",
    "case_share_by_level",
    "population_share_by_level",
    "multiple_imputation",
    "population_weights",
    "product_density",
    "reweight_levels",
    "infected_feature_density",
]


class RecordSchemaError(ValueError):
    """Malformed input row; the message carries the offending line number."""


@dataclass(frozen=True)
class QuarantineRecord:
    """One historical observation: features, infection flag, ceiled incubation."""

    age: int
    risk_level: str = "none"
    infected: bool = False
    ceiled_incubation: int | None = None

    def __post_init__(self) -> None:
        if self.risk_level not in RISK_LEVELS:
            raise ValueError(f"risk_level must be one of {RISK_LEVELS}, got {self.risk_level!r}")
        if self.ceiled_incubation is not None:
            if not self.infected:
                raise ValueError("uninfected records cannot carry an incubation period")
            if self.ceiled_incubation < 1:
                raise ValueError(
                    f"ceiled incubation must be a positive integer, got {self.ceiled_incubation!r}"
                )

    def feature(self) -> FeaturePoint:
        return FeaturePoint(self.risk_level, self.age)

    @property
    def needs_imputation(self) -> bool:
        return self.infected and self.ceiled_incubation is None


class LoadResult(NamedTuple):
    records: list[QuarantineRecord]
    dropped_out_of_support: int


_RECORD_HEADER = ["age", "risk_level", "infected", "z"]


def load_records(
    path,
    age_min: int = 11,
    age_max: int = 80,
    allow_missing_z: bool = False,
) -> LoadResult:
    """Read and validate ``records.csv``.

    Ages outside [age_min, age_max] are dropped and counted. A present ``z``
    on an uninfected row is an error; a missing ``z`` on an infected row is
    only legal with ``allow_missing_z`` (imputation inputs).
    """
    records: list[QuarantineRecord] = []
    dropped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RecordSchemaError(f"{path}: empty file, expected header {_RECORD_HEADER}")
        if [h.strip() for h in header] != _RECORD_HEADER:
            raise RecordSchemaError(
                f"{path}: line 1: expected header {_RECORD_HEADER}, got {header}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise RecordSchemaError(f"{path}: line {line_no}: expected 4 fields, got {len(row)}")
            age_s, level_s, infected_s, z_s = (c.strip() for c in row)
            try:
                age = int(age_s)
            except ValueError:
                raise RecordSchemaError(f"{path}: line {line_no}: bad age {age_s!r}") from None
            level = level_s or "none"
            if level not in RISK_LEVELS:
                raise RecordSchemaError(
                    f"{path}: line {line_no}: risk_level must be one of {RISK_LEVELS}, got {level_s!r}"
                )
            if infected_s not in ("0", "1"):
                raise RecordSchemaError(
                    f"{path}: line {line_no}: infected must be 0 or 1, got {infected_s!r}"
                )
            infected = infected_s == "1"
            z: int | None = None
            if z_s:
                try:
                    z = int(z_s)
                except ValueError:
                    raise RecordSchemaError(f"{path}: line {line_no}: bad z {z_s!r}") from None
                if z < 1:
                    raise RecordSchemaError(f"{path}: line {line_no}: z must be >= 1, got {z}")
                if not infected:
                    raise RecordSchemaError(
                        f"{path}: line {line_no}: z given for an uninfected row"
                    )
            elif infected and not allow_missing_z:
                raise RecordSchemaError(
                    f"{path}: line {line_no}: infected row without z "
                    "(pass allow_missing_z for imputation inputs)"
                )
            if not age_min <= age <= age_max:
                dropped += 1
                continue
            records.append(
                QuarantineRecord(age=age, risk_level=level, infected=infected, ceiled_incubation=z)
            )
    return LoadResult(records, dropped)


def incubation_records(records: Iterable[QuarantineRecord]) -> np.ndarray:
    """(age, Z) array of the infected, fully observed records, for the MLE."""
    rows = [
        (r.age, r.ceiled_incubation)
        for r in records
        if r.infected and r.ceiled_incubation is not None
    ]
    if not rows:
        raise ValueError("no infected records with observed incubation periods")
    return np.array(rows, dtype=float)


def infected_features(records: Iterable[QuarantineRecord]) -> list[FeaturePoint]:
    return [r.feature() for r in records if r.infected]


# ---------------------------------------------------------------------------
# Current infection index and risk grouping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CountryCaseCount:
    """14-day case count and population of one country."""

    country: str
    new_cases_14d: int
    population: int

    def __post_init__(self) -> None:
        if self.population <= 0:
            raise ValueError(f"population must be positive, got {self.population!r}")
        if self.new_cases_14d < 0:
            raise ValueError(f"case count must be nonnegative, got {self.new_cases_14d!r}")


def compute_cii(c: CountryCaseCount) -> float:
    """Current infection index: 1e6 * new 14-day cases / population."""
    return 1e6 * c.new_cases_14d / c.population


def risk_group(cii: float) -> str:
    """high above 300, medium in (50, 300], low at or below 50."""
    if cii < 0.0 or not math.isfinite(cii):
        raise ValueError(f"infection index must be finite and nonnegative, got {cii!r}")
    if cii > 300.0:
        return "high"
    if cii > 50.0:
        return "medium"
    return "low"


def load_cases(path) -> list[CountryCaseCount]:
    """Read ``cases.csv`` (header country,new_cases_14d,population)."""
    out: list[CountryCaseCount] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != [
            "country",
            "new_cases_14d",
            "population",
        ]:
            raise RecordSchemaError(
                f"{path}: expected header country,new_cases_14d,population"
            )
        for row in reader:
            line_no = reader.line_num
            try:
                out.append(
                    CountryCaseCount(
                        country=row["country"].strip(),
                        new_cases_14d=int(row["new_cases_14d"]),
                        population=int(row["population"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise RecordSchemaError(f"{path}: line {line_no}: {exc}") from None
    return out


def case_share_by_level(cases: Sequence[CountryCaseCount]) -> dict[str, float]:
    """Share of recent cases falling in each risk group (proxy for the
    infected feature distribution over risk levels)."""
    totals: dict[str, float] = {}
    for c in cases:
        totals[risk_group(compute_cii(c))] = totals.get(risk_group(compute_cii(c)), 0.0) + c.new_cases_14d
    grand = sum(totals.values())
    if grand <= 0.0:
        raise ValueError("case table has no cases; level shares are undefined")
    return {lvl: v / grand for lvl, v in sorted(totals.items())}


def population_share_by_level(cases: Sequence[CountryCaseCount]) -> dict[str, float]:
    """Share of population living in countries of each risk group."""
    totals: dict[str, float] = {}
    for c in cases:
        lvl = risk_group(compute_cii(c))
        totals[lvl] = totals.get(lvl, 0.0) + c.population
    grand = sum(totals.values())
    return {lvl: v / grand for lvl, v in sorted(totals.items())}


# ---------------------------------------------------------------------------
# Multiple imputation
# ---------------------------------------------------------------------------


def multiple_imputation(
    records: Sequence[QuarantineRecord],
    model: ConditionalIncubationModel,
    m: int,
    seed,
) -> list[list[QuarantineRecord]]:
    """Complete missing incubation periods ``m`` times from the fitted law.

    Each infected record without a ceiled incubation gets an independent
    draw Z = ceil(Y) with Y from the conditional law at the record's age;
    the incubation law depends on age only, so records at the same age are
    imputed identically in distribution regardless of risk level.
    Downstream estimators should be computed per completed dataset and
    averaged.
    """
    if m < 1:
        raise ValueError(f"number of imputations must be >= 1, got {m}")
    records = list(records)
    missing_idx = [i for i, r in enumerate(records) if r.needs_imputation]
    ages = np.array([records[i].age for i in missing_idx], dtype=float)
    if ages.size:
        model._check_ages(ages)  # fail fast with the age-support message
    datasets: list[list[QuarantineRecord]] = []
    for child in np.random.SeedSequence(seed).spawn(m):
        rng = np.random.default_rng(child)
        completed = list(records)
        if ages.size:
            z = np.ceil(model.sample(ages, rng)).astype(int)
            for k, i in enumerate(missing_idx):
                completed[i] = replace(records[i], ceiled_incubation=int(z[k]))
        datasets.append(completed)
    return datasets


# ---------------------------------------------------------------------------
# Population tables and feature densities
# ---------------------------------------------------------------------------


def population_weights(path, age_min: int = 11, age_max: int = 80) -> DensityEstimate:
    """Normalized age distribution from ``population.csv``.

    The table must cover every age of the support; mass outside the support
    is discarded and the rest renormalized.
    """
    table: dict[int, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["age", "weight"]:
            raise RecordSchemaError(f"{path}: expected header age,weight")
        for row in reader:
            line_no = reader.line_num
            try:
                age = int(row["age"])
                w = float(row["weight"])
            except (TypeError, ValueError) as exc:
                raise RecordSchemaError(f"{path}: line {line_no}: {exc}") from None
            if w < 0.0:
                raise RecordSchemaError(f"{path}: line {line_no}: negative weight {w}")
            table[age] = table.get(age, 0.0) + w
    missing = [a for a in range(age_min, age_max + 1) if a not in table]
    if missing:
        raise RecordSchemaError(
            f"{path}: population table does not cover support ages {missing[:5]}..."
            if len(missing) > 5
            else f"{path}: population table does not cover support ages {missing}"
        )
    ages = list(range(age_min, age_max + 1))
    w = np.array([table[a] for a in ages], dtype=float)
    total = w.sum()
    if total <= 0.0:
        raise RecordSchemaError(f"{path}: population weights sum to zero on the support")
    points = tuple(FeaturePoint("none", a) for a in ages)
    return DensityEstimate(points, w / total, bandwidth=None)


def product_density(
    age_density: DensityEstimate, level_shares: Mapping[str, float]
) -> DensityEstimate:
    """Combine an age-only density with risk-level shares into a joint density."""
    shares = dict(level_shares)
    total = sum(shares.values())
    if total <= 0.0 or any(v < 0.0 for v in shares.values()):
        raise ValueError("level shares must be nonnegative with positive total")
    pts: list[FeaturePoint] = []
    w: list[float] = []
    for lvl, share in sorted(shares.items()):
        for p, pw in zip(age_density.points, age_density.weights):
            pts.append(FeaturePoint(lvl, p.age))
            w.append(share / total * pw)
    return DensityEstimate(tuple(pts), np.array(w), bandwidth=age_density.bandwidth)


def reweight_levels(
    est: DensityEstimate, level_shares: Mapping[str, float]
) -> DensityEstimate:
    """Replace the density's risk-level proportions, keeping the within-level
    age profiles (the external case-count override of empirical shares)."""
    shares = dict(level_shares)
    if set(shares) != set(est.levels):
        raise ValueError(
            f"level shares {sorted(shares)} do not match the density levels {est.levels}"
        )
    total = sum(shares.values())
    if total <= 0.0 or any(v < 0.0 for v in shares.values()):
        raise ValueError("level shares must be nonnegative with positive total")
    weights = est.weights.copy()
    levels = np.array([p.risk_level for p in est.points])
    for lvl, share in shares.items():
        mask = levels == lvl
        mass = weights[mask].sum()
        if mass <= 0.0 and share > 0.0:
            raise ValueError(f"cannot place mass on level {lvl!r}: no support there")
        if mass > 0.0:
            weights[mask] *= (share / total) / mass
    return DensityEstimate(est.points, weights, bandwidth=est.bandwidth)


def infected_feature_density(
    records: Sequence[QuarantineRecord],
    space: FeatureSpace,
    bandwidth: float | str = "auto",
    level_shares: Mapping[str, float] | None = None,
) -> DensityEstimate:
    """Kernel density of infected features, with optional external level shares."""
    est = fit_kernel_density(infected_features(records), space, bandwidth)
    if level_shares is not None:
        est = reweight_levels(est, level_shares)
    return est
