"""Quantile baseline rules, evaluation metrics, and the reproduction-number check.

The two baselines quarantine everyone for the sample quantile of the
incubation period, or each person for the estimated conditional quantile at
their age. Rules are compared by the average quarantine duration (AQD) of
the uninfected feature law and the escape probability (EP) of infected
records, with durations optionally rounded to whole days as in deployment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from quaropt.density_estimation import DensityEstimate, FeaturePoint
from quaropt.incubation_model import ConditionalIncubationModel, conditional_quantile
from quaropt.numerics import quantile_index, round_half_up
from quaropt.rule_solver import QuarantineRule

__all__ = [
    "EvaluationReport",
    "unconditional_quantile_rule",
    "conditional_quantile_rule",
    "average_quarantine_duration",
    "empirical_escape",
    "ReproductionNumber",
    "effective_reproductive_number",
    "write_evaluation_csv",
]


def unconditional_quantile_rule(
    incubation_sample: Sequence[float],
    p: float,
    points: Sequence[FeaturePoint],
) -> QuarantineRule:
    """Constant rule at the p-th sample quantile of the incubation periods.

    The quantile is the order statistic at index ceil(n*p), so the fraction
    of the fitting sample exceeding the duration is at most 1-p.
    """
    sample = np.asarray(incubation_sample, dtype=float)
    if sample.size == 0:
        raise ValueError("cannot take a quantile of an empty sample")
    q = float(np.sort(sample)[quantile_index(sample.size, p)])
    return QuarantineRule(
        points=tuple(points),
        durations=np.full(len(tuple(points)), q),
        provenance=f"unconditional_quantile(p={p:g})",
    )


def conditional_quantile_rule(
    model: ConditionalIncubationModel,
    p: float,
    points: Sequence[FeaturePoint],
) -> QuarantineRule:
    """Per-feature rule at the model's conditional p-quantile."""
    pts = tuple(points)
    ages = np.array([x.age for x in pts], dtype=float)
    durations = np.asarray(conditional_quantile(model, ages, p), dtype=float)
    return QuarantineRule(
        points=pts, durations=durations, provenance=f"conditional_quantile(p={p:g})"
    )


def average_quarantine_duration(
    rule: QuarantineRule,
    population: DensityEstimate,
    round_to_integer: bool = True,
) -> float:
    """Expected duration under the uninfected feature law.

    The rule must cover every support point of the population density; days
    are rounded half-up before averaging when ``round_to_integer`` is set,
    matching how durations are deployed.
    """
    durations = rule.durations_at(population.points)
    if round_to_integer:
        durations = round_half_up(durations)
    return float(np.dot(population.weights, durations))


def empirical_escape(
    rule: QuarantineRule,
    infected_records: Sequence[tuple[FeaturePoint, int]],
    round_to_integer: bool = True,
) -> float:
    """Fraction of infected records whose ceiled incubation exceeds the rule."""
    records = list(infected_records)
    if not records:
        raise ValueError("escape probability needs a nonempty infected sample")
    durations = rule.durations_at([x for x, _ in records])
    if round_to_integer:
        durations = round_half_up(durations)
    z = np.array([int(zi) for _, zi in records], dtype=float)
    return float(np.mean(z > durations))


class ReproductionNumber(NamedTuple):
    value: float
    controlled: bool  # strictly below one: the epidemic dies out


def effective_reproductive_number(
    theta: float, epsilon: float, r0: float
) -> ReproductionNumber:
    """Post-quarantine reproduction number (1-theta)*R0 + theta*epsilon*R0.

    ``theta`` is the quarantined fraction of infected people and ``epsilon``
    the escape probability of the rule. Evaluated as R0*(1 - theta*(1-eps)),
    which is algebraically identical and exact at boundary cases such as
    theta=0.8, epsilon=1/16, R0=4 -> 1.0.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta!r}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon!r}")
    if not r0 > 0.0:
        raise ValueError(f"r0 must be positive, got {r0!r}")
    value = r0 * (1.0 - theta * (1.0 - epsilon))
    return ReproductionNumber(value=value, controlled=value < 1.0)


@dataclass(frozen=True)
class EvaluationReport:
    """One comparison row: a rule's AQD and EP."""

    method: str
    aqd: float
    ep: float
    n_infected: int
    rounded: bool

    def __post_init__(self) -> None:
        if not 0.0 <= self.ep <= 1.0:
            raise ValueError(f"escape probability must lie in [0, 1], got {self.ep!r}")
        if self.aqd < 0.0:
            raise ValueError(f"average duration must be nonnegative, got {self.aqd!r}")


def write_evaluation_csv(reports: Sequence[EvaluationReport], path) -> None:
    """Emit ``method,aqd,ep,n_infected,rounded`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "aqd", "ep", "n_infected", "rounded"])
        for r in reports:
            writer.writerow([r.method, repr(r.aqd), repr(r.ep), r.n_infected, int(r.rounded)])
