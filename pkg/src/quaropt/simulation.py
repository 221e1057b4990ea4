"""Simulation studies: four generative scenarios, the full pipeline, replications.

Each scenario shares the infection and age laws (I ~ Bernoulli(0.05),
infected ages TN(55, 625, 10, 80), uninfected TN(25, 400, 10, 80)) and
varies the conditional incubation law:

1. Weibull(1.5, 4.5 + 0.0025 (x - 30)^2)          -- working model correct
2. Weibull(1.5, 3 + ln x)                          -- scale form misspecified
3. lognormal(1.5, 0.6 + 0.0002 (x - 35)^2)         -- family misspecified
4. equal mix of scenario-1 Weibull and Weibull(4, 10) -- bimodal: the
   unimodality assumption of the duration rule fails

Ages are discretized to the integer grid {10..80} before any estimation,
and evaluation integrates the rounded rules against the discretized true
age laws and the true conditional law rather than fresh draws (lower
Monte-Carlo variance at identical targets).
"""

from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import ndtr, ndtri

from quaropt.baselines import (
    conditional_quantile_rule,
    unconditional_quantile_rule,
)
from quaropt.data_pipeline import QuarantineRecord
from quaropt.density_estimation import (
    DensityEstimate,
    FeaturePoint,
    FeatureSpace,
    fit_kernel_density,
)
from quaropt.distributions import (
    DEFAULT_Y_MAX,
    TruncNormalParams,
    _lognormal_cdf,
    _lognormal_pdf,
    _lognormal_quantile,
    _mixture_cdf,
    _mixture_pdf,
    _weibull_cdf,
    _weibull_pdf,
    _weibull_quantile,
)
from quaropt.incubation_model import FitOptions, fit_mle
from quaropt.numerics import round_half_up
from quaropt.rule_solver import (
    QuarantineRule,
    RatioCurveSet,
    ThresholdSolution,
    optimal_rule,
    solve_threshold,
)

__all__ = [
    "METHODS",
    "ScenarioSpec",
    "scenario",
    "conditional_truth",
    "SimulatedDataset",
    "generate_dataset",
    "discretized_age_weights",
    "PipelineOptions",
    "ReplicationResult",
    "run_pipeline",
    "run_replications",
    "ReplicationSummary",
    "theoretical_optimal_durations",
]

METHODS = ("quantile", "conditional_quantile", "optimal")


@dataclass(frozen=True)
class ScenarioSpec:
    """Generative laws of one simulation scenario."""

    scenario_id: int
    infection_prob: float = 0.05
    infected_age_law: TruncNormalParams = TruncNormalParams(55.0, 625.0, 10.0, 80.0)
    uninfected_age_law: TruncNormalParams = TruncNormalParams(25.0, 400.0, 10.0, 80.0)
    age_min: int = 10
    age_max: int = 80

    def __post_init__(self) -> None:
        if self.scenario_id not in (1, 2, 3, 4):
            raise ValueError(f"scenario id must be 1..4, got {self.scenario_id!r}")
        if not 0.0 < self.infection_prob < 1.0:
            raise ValueError("infection probability must lie in (0, 1)")

    def space(self) -> FeatureSpace:
        return FeatureSpace(("none",), self.age_min, self.age_max)


def scenario(scenario_id: int) -> ScenarioSpec:
    """The standard specification of scenario 1, 2, 3 or 4."""
    return ScenarioSpec(scenario_id=scenario_id)


def _scenario1_scale(age):
    return 4.5 + 0.0025 * (np.asarray(age, dtype=float) - 30.0) ** 2


class _WeibullQuadraticTruth:
    """Scenario 1: Weibull with the quadratic scale the working model assumes."""

    shape = 1.5

    def pdf(self, y, age):
        return _weibull_pdf(y, self.shape, _scenario1_scale(age))

    def cdf(self, y, age):
        return _weibull_cdf(y, self.shape, _scenario1_scale(age))

    def sample(self, age, rng):
        return _weibull_quantile(rng.random(np.shape(age)), self.shape, _scenario1_scale(age))


class _WeibullLogTruth:
    """Scenario 2: Weibull scale 3 + ln(age); the quadratic form is wrong."""

    shape = 1.5

    @staticmethod
    def _scale(age):
        return 3.0 + np.log(np.asarray(age, dtype=float))

    def pdf(self, y, age):
        return _weibull_pdf(y, self.shape, self._scale(age))

    def cdf(self, y, age):
        return _weibull_cdf(y, self.shape, self._scale(age))

    def sample(self, age, rng):
        return _weibull_quantile(rng.random(np.shape(age)), self.shape, self._scale(age))


class _LognormalTruth:
    """Scenario 3: lognormal(1.5, 0.6 + 0.0002 (age - 35)^2)."""

    log_mean = 1.5

    @staticmethod
    def _log_sd(age):
        return 0.6 + 0.0002 * (np.asarray(age, dtype=float) - 35.0) ** 2

    def pdf(self, y, age):
        return _lognormal_pdf(y, self.log_mean, self._log_sd(age))

    def cdf(self, y, age):
        return _lognormal_cdf(y, self.log_mean, self._log_sd(age))

    def sample(self, age, rng):
        return _lognormal_quantile(rng.random(np.shape(age)), self.log_mean, self._log_sd(age))


class _MixtureTruth:
    """Scenario 4: equal mixture with a second mode near 9 days (bimodal)."""

    weight = 0.5
    shape_a = 1.5
    shape_b = 4.0
    scale_b = 10.0

    def pdf(self, y, age):
        return _mixture_pdf(
            y, self.weight, self.shape_a, _scenario1_scale(age), self.shape_b, self.scale_b
        )

    def cdf(self, y, age):
        return _mixture_cdf(
            y, self.weight, self.shape_a, _scenario1_scale(age), self.shape_b, self.scale_b
        )

    def sample(self, age, rng):
        pick_a = rng.random(np.shape(age)) < self.weight
        u = rng.random(np.shape(age))
        draw_a = _weibull_quantile(u, self.shape_a, _scenario1_scale(age))
        draw_b = _weibull_quantile(u, self.shape_b, self.scale_b)
        return np.where(pick_a, draw_a, draw_b)


_TRUTHS = {
    1: _WeibullQuadraticTruth(),
    2: _WeibullLogTruth(),
    3: _LognormalTruth(),
    4: _MixtureTruth(),
}


def conditional_truth(spec: ScenarioSpec):
    """The true conditional incubation law (pdf/cdf/sample over ages)."""
    return _TRUTHS[spec.scenario_id]


def _truncnorm_ppf(u, law: TruncNormalParams):
    a, b = law._standardized_bounds()
    lo, hi = ndtr(a), ndtr(b)
    return law.mean + law.sd * ndtri(lo + u * (hi - lo))


@dataclass(frozen=True)
class SimulatedDataset:
    """One generated sample: integer ages, infection flags, incubation periods.

    The continuous incubation ``incubation`` is kept (0 for the uninfected);
    the ceiled view feeds the interval likelihood.
    """

    spec: ScenarioSpec
    ages: np.ndarray
    infected: np.ndarray
    incubation: np.ndarray

    @property
    def n(self) -> int:
        return self.ages.size

    def infected_ages(self) -> np.ndarray:
        return self.ages[self.infected]

    def uninfected_ages(self) -> np.ndarray:
        return self.ages[~self.infected]

    def ceiled(self) -> np.ndarray:
        return np.ceil(self.incubation[self.infected]).astype(int)

    def mle_records(self, ceiled: bool = True) -> np.ndarray:
        ages = self.infected_ages().astype(float)
        dur = self.ceiled().astype(float) if ceiled else self.incubation[self.infected]
        return np.column_stack([ages, dur])

    def feature_points(self, infected: bool) -> list[FeaturePoint]:
        ages = self.infected_ages() if infected else self.uninfected_ages()
        return [FeaturePoint("none", int(a)) for a in ages]

    def records(self) -> list[QuarantineRecord]:
        z = np.where(self.infected, np.ceil(self.incubation), 0).astype(int)
        return [
            QuarantineRecord(
                age=int(a),
                risk_level="none",
                infected=bool(i),
                ceiled_incubation=int(zz) if i else None,
            )
            for a, i, zz in zip(self.ages, self.infected, z)
        ]


def generate_dataset(spec: ScenarioSpec, n: int, seed) -> SimulatedDataset:
    """Draw n iid individuals from the scenario's generative laws.

    Ages are drawn from the group's truncated normal and rounded onto the
    integer grid; incubation periods are then drawn from the conditional
    law at the rounded age, so the stored age is the exact conditioning
    variable for every downstream likelihood.
    """
    if n <= 0:
        raise ValueError(f"sample size must be positive, got {n}")
    rng = np.random.default_rng(seed)
    infected = rng.random(n) < spec.infection_prob
    u = rng.random(n)
    ages_cont = np.where(
        infected,
        _truncnorm_ppf(u, spec.infected_age_law),
        _truncnorm_ppf(u, spec.uninfected_age_law),
    )
    ages = np.rint(ages_cont).astype(int)
    incubation = np.zeros(n)
    if np.any(infected):
        incubation[infected] = conditional_truth(spec).sample(
            ages[infected].astype(float), rng
        )
    return SimulatedDataset(spec=spec, ages=ages, infected=infected, incubation=incubation)


def discretized_age_weights(law: TruncNormalParams, age_min: int, age_max: int) -> np.ndarray:
    """Mass of each integer age bin [j-0.5, j+0.5] under the truncated normal,
    renormalized over the grid (matches rounding continuous ages)."""
    ages = np.arange(age_min, age_max + 1, dtype=float)
    a, b = law._standardized_bounds()
    lo_z, hi_z = ndtr(a), ndtr(b)
    edges_lo = np.clip((ages - 0.5 - law.mean) / law.sd, a, b)
    edges_hi = np.clip((ages + 0.5 - law.mean) / law.sd, a, b)
    w = (ndtr(edges_hi) - ndtr(edges_lo)) / (hi_z - lo_z)
    return w / w.sum()


@dataclass(frozen=True)
class PipelineOptions:
    """Estimation and evaluation knobs of one replication."""

    y_max: float = DEFAULT_Y_MAX
    bandwidth: float | str = "auto"
    round_durations: bool = True
    likelihood: str = "ceiled"  # fit on Z = ceil(Y); "continuous" uses raw Y


@dataclass(frozen=True)
class ReplicationResult:
    """Metrics of one replication, per method."""

    scenario_id: int
    aqd: Mapping[str, float]
    ep: Mapping[str, float]
    durations: Mapping[str, np.ndarray]  # fractional days on the age grid
    fitted_parameters: tuple[float, float, float, float]
    c0: float
    c_star: float
    fallback_used: bool
    bandwidth_f1: float
    bandwidth_f0: float
    rep_index: int | None = None


def run_pipeline(
    spec: ScenarioSpec,
    n: int,
    epsilon: float,
    seed,
    options: PipelineOptions | None = None,
) -> ReplicationResult:
    """Generate a dataset, estimate everything, and evaluate the three rules.

    The feature densities come from the kernel estimator, the conditional
    law from the Weibull working-model MLE, and the rules are evaluated
    against the true (discretized) age laws and true conditional law with
    durations rounded to whole days.
    """
    options = options or PipelineOptions()
    ds = generate_dataset(spec, n, seed)
    space = spec.space()
    pts = space.points()
    ages_grid = space.ages.astype(float)

    f1 = fit_kernel_density(ds.feature_points(infected=True), space, options.bandwidth)
    f0 = fit_kernel_density(ds.feature_points(infected=False), space, options.bandwidth)
    fit = fit_mle(
        ds.mle_records(ceiled=options.likelihood == "ceiled"),
        options=FitOptions(
            likelihood=options.likelihood,
            age_support=(spec.age_min, spec.age_max),
        ),
    )

    p = 1.0 - epsilon
    rules: dict[str, QuarantineRule] = {
        "quantile": unconditional_quantile_rule(ds.incubation[ds.infected], p, pts),
        "conditional_quantile": conditional_quantile_rule(fit.model, p, pts),
    }
    opt, solution = optimal_rule(
        epsilon, f1, f0, fit.model, ds.feature_points(infected=True), y_max=options.y_max
    )
    rules["optimal"] = opt

    truth = conditional_truth(spec)
    w0 = discretized_age_weights(spec.uninfected_age_law, spec.age_min, spec.age_max)
    w1 = discretized_age_weights(spec.infected_age_law, spec.age_min, spec.age_max)
    aqd: dict[str, float] = {}
    ep: dict[str, float] = {}
    durations: dict[str, np.ndarray] = {}
    for name, rule in rules.items():
        d = rule.durations  # aligned with the age grid: single level, sorted
        d_eval = round_half_up(d) if options.round_durations else d
        aqd[name] = float(np.dot(w0, d_eval))
        ep[name] = 1.0 - float(np.dot(w1, truth.cdf(d_eval, ages_grid)))
        durations[name] = d
    return ReplicationResult(
        scenario_id=spec.scenario_id,
        aqd=aqd,
        ep=ep,
        durations=durations,
        fitted_parameters=(fit.model.shape, *fit.model.gamma),
        c0=solution.c0,
        c_star=solution.c_star,
        fallback_used=solution.fallback_used,
        bandwidth_f1=float(f1.bandwidth),
        bandwidth_f0=float(f0.bandwidth),
        rep_index=None,
    )


def theoretical_optimal_durations(
    spec: ScenarioSpec, epsilon: float, y_max: float = DEFAULT_Y_MAX
) -> tuple[np.ndarray, ThresholdSolution]:
    """Durations of the threshold rule built from the true laws.

    The population escape (discretized infected age law against the true
    conditional CDF) replaces the empirical average. Scenario 4 violates
    the unimodality assumption; the crossing search still returns the
    largest crossing, with the violation recorded on the solution.
    """
    space = spec.space()
    pts = space.points()
    w0 = discretized_age_weights(spec.uninfected_age_law, spec.age_min, spec.age_max)
    w1 = discretized_age_weights(spec.infected_age_law, spec.age_min, spec.age_max)
    curves = RatioCurveSet(conditional_truth(spec), pts, w1 / w0, y_max=y_max)
    solution = solve_threshold(epsilon, curves, list(pts), weights=w1)
    return curves.superlevel_durations(solution.c0), solution


def _one_replication(args) -> ReplicationResult:
    spec, n, epsilon, seed, options, rep_index = args
    result = run_pipeline(spec, n, epsilon, seed, options)
    return dataclasses.replace(result, rep_index=rep_index)


@dataclass(frozen=True)
class ReplicationSummary:
    """Aggregated replication study with Monte-Carlo standard errors."""

    spec: ScenarioSpec
    n: int
    epsilon: float
    reps: int
    base_seed: int
    results: tuple[ReplicationResult, ...]
    failures: tuple[tuple[int, str], ...]
    options: PipelineOptions = field(default_factory=PipelineOptions)

    def method_stats(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        k = len(self.results)
        for m in METHODS:
            aqd = np.array([r.aqd[m] for r in self.results])
            ep = np.array([r.ep[m] for r in self.results])
            out[m] = {
                "aqd_mean": float(aqd.mean()),
                "aqd_mc_se": float(aqd.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0,
                "ep_mean": float(ep.mean()),
                "ep_mc_se": float(ep.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0,
            }
        return out

    def mean_durations(self) -> dict[str, np.ndarray]:
        return {
            m: np.mean([r.durations[m] for r in self.results], axis=0) for m in METHODS
        }

    def write_table_csv(self, path) -> None:
        stats = self.method_stats()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["scenario", "method", "aqd", "aqd_mc_se", "ep", "ep_mc_se", "reps", "failures"]
            )
            for m in METHODS:
                s = stats[m]
                writer.writerow(
                    [
                        self.spec.scenario_id,
                        m,
                        f"{s['aqd_mean']:.4f}",
                        f"{s['aqd_mc_se']:.6f}",
                        f"{s['ep_mean']:.6f}",
                        f"{s['ep_mc_se']:.6f}",
                        len(self.results),
                        len(self.failures),
                    ]
                )

    def write_duration_curves_csv(self, path, include_theoretical: bool | None = None) -> None:
        """Mean estimated duration per age and method; the truth-based optimal
        curve is added when the scenario satisfies the unimodality assumption."""
        if include_theoretical is None:
            include_theoretical = self.spec.scenario_id != 4
        ages = self.spec.space().ages
        curves = self.mean_durations()
        rows: list[tuple[int, str, float]] = []
        for m in METHODS:
            rows.extend((int(a), m, float(d)) for a, d in zip(ages, curves[m]))
        if include_theoretical:
            theo, _ = theoretical_optimal_durations(
                self.spec, self.epsilon, y_max=self.options.y_max
            )
            rows.extend((int(a), "theoretical_optimal", float(d)) for a, d in zip(ages, theo))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["age", "method", "duration_days"])
            for age, m, d in rows:
                writer.writerow([age, m, repr(d)])


def run_replications(
    spec: ScenarioSpec,
    n: int,
    epsilon: float,
    reps: int,
    base_seed: int,
    options: PipelineOptions | None = None,
    jobs: int = 1,
) -> ReplicationSummary:
    """Replicate the full pipeline on independent seeds and aggregate.

    Per-replication seeds are the children of ``SeedSequence(base_seed)``
    (documented splitting rule: replication k uses ``spawn(reps)[k]``), so
    results are reproducible and independent of ``jobs``. Failed
    replications are collected with their index instead of aborting.
    """
    if reps < 1:
        raise ValueError(f"need at least one replication, got {reps}")
    options = options or PipelineOptions()
    children = np.random.SeedSequence(base_seed).spawn(reps)
    tasks = [(spec, n, epsilon, children[k], options, k) for k in range(reps)]
    results: list[ReplicationResult] = []
    failures: list[tuple[int, str]] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for k, outcome in enumerate(pool.map(_one_replication_safe, tasks)):
                if isinstance(outcome, ReplicationResult):
                    results.append(outcome)
                else:
                    failures.append((k, outcome))
    else:
        for k, task in enumerate(tasks):
            outcome = _one_replication_safe(task)
            if isinstance(outcome, ReplicationResult):
                results.append(outcome)
            else:
                failures.append((k, outcome))
    if not results:
        raise RuntimeError(f"all {reps} replications failed; first error: {failures[0][1]}")
    return ReplicationSummary(
        spec=spec,
        n=n,
        epsilon=epsilon,
        reps=reps,
        base_seed=base_seed,
        results=tuple(results),
        failures=tuple(failures),
        options=options,
    )


def _one_replication_safe(args):
    try:
        return _one_replication(args)
    except Exception as exc:  # aggregated, not fatal: one bad draw should not kill a study
        return f"{type(exc).__name__}: {exc}"
