"""Feature-space densities on a bounded integer age grid with risk strata.

The feature of an individual is a (risk_level, age) pair. Densities over
that space are represented as tabulated weights on an explicit support.
Smoothing uses a Gaussian kernel on the integer age lattice: the smoothed
mass at a grid age is divided by the kernel mass the bounded grid retains
there (the edge-deficiency factor) and the result is renormalized, so no
mass leaks outside the support and an exactly uniform sample stays uniform
at every bandwidth. Categorical strata are weighted by their empirical
proportions and smoothed independently.
"""

from __future__ import annotations

import csv
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "RISK_LEVELS",
    "FeaturePoint",
    "FeatureSpace",
    "DensityEstimate",
    "fit_kernel_density",
    "select_bandwidth",
    "tabulated_density",
    "density_ratio_features",
    "write_density_csv",
    "read_density_csv",
]

RISK_LEVELS = ("high", "medium", "low", "none")

#: Log-spaced candidate bandwidths (years) scanned by cross-validation.
BANDWIDTH_GRID = tuple(np.geomspace(0.5, 10.0, 25))


@dataclass(frozen=True, order=True)
class FeaturePoint:
    """One individual's covariates: origin risk level and age in years."""

    risk_level: str
    age: int

    def __post_init__(self) -> None:
        if self.risk_level not in RISK_LEVELS:
            raise ValueError(
                f"risk_level must be one of {RISK_LEVELS}, got {self.risk_level!r}"
            )
        if not isinstance(self.age, (int, np.integer)) or isinstance(self.age, bool):
            raise ValueError(f"age must be an integer, got {self.age!r}")
        object.__setattr__(self, "age", int(self.age))


@dataclass(frozen=True)
class FeatureSpace:
    """Product support: a set of risk levels crossed with an age range."""

    levels: tuple[str, ...]
    age_min: int
    age_max: int

    def __post_init__(self) -> None:
        levels = tuple(sorted(set(self.levels)))
        if not levels:
            raise ValueError("feature space needs at least one risk level")
        for lvl in levels:
            if lvl not in RISK_LEVELS:
                raise ValueError(f"unknown risk level {lvl!r}")
        if self.age_min > self.age_max:
            raise ValueError(f"empty age range [{self.age_min}, {self.age_max}]")
        object.__setattr__(self, "levels", levels)

    @property
    def ages(self) -> np.ndarray:
        return np.arange(self.age_min, self.age_max + 1)

    def points(self) -> tuple[FeaturePoint, ...]:
        return tuple(
            FeaturePoint(lvl, age)
            for lvl in self.levels
            for age in range(self.age_min, self.age_max + 1)
        )

    def __contains__(self, x: FeaturePoint) -> bool:
        return x.risk_level in self.levels and self.age_min <= x.age <= self.age_max


SupportLike = Union[FeatureSpace, Sequence[FeaturePoint]]


def _canonical_points(support: SupportLike) -> tuple[FeaturePoint, ...]:
    if isinstance(support, FeatureSpace):
        return support.points()
    pts = tuple(sorted(set(support)))
    if not pts:
        raise ValueError("support must contain at least one feature point")
    return pts


@dataclass(frozen=True)
class DensityEstimate:
    """Probability weights on an explicit feature support.

    ``bandwidth`` is the kernel bandwidth in years, or None for exact
    tabulated weights. Instances are immutable and safe to share.
    """

    points: tuple[FeaturePoint, ...]
    weights: np.ndarray
    bandwidth: float | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        pts = tuple(self.points)
        w = np.asarray(self.weights, dtype=float).copy()
        if len(pts) != w.size:
            raise ValueError("points and weights length mismatch")
        if len(set(pts)) != len(pts):
            raise ValueError("duplicate feature points in support")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        total = w.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        w /= total
        order = sorted(range(len(pts)), key=lambda i: pts[i])
        pts = tuple(pts[i] for i in order)
        w = w[list(order)]
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(pts)})

    def weight(self, x: FeaturePoint) -> float:
        i = self._index.get(x)
        if i is None:
            raise ValueError(f"feature point {x} is outside the density support")
        return float(self.weights[i])

    def index_of(self, x: FeaturePoint) -> int:
        i = self._index.get(x)
        if i is None:
            raise ValueError(f"feature point {x} is outside the density support")
        return i

    @property
    def levels(self) -> tuple[str, ...]:
        return tuple(sorted({p.risk_level for p in self.points}))

    def ages_array(self) -> np.ndarray:
        return np.array([p.age for p in self.points])

    def mean_age(self) -> float:
        return float(np.dot(self.ages_array(), self.weights))


def _gaussian_lattice(grid: np.ndarray, centers: np.ndarray, bandwidth: float) -> np.ndarray:
    """phi[j, c] = exp(-(grid_j - center_c)^2 / (2 h^2))."""
    z = (grid[:, None] - centers[None, :]) / bandwidth
    return np.exp(-0.5 * z * z)


def _boundary_factor(grid: np.ndarray, bandwidth: float) -> np.ndarray:
    """D[j] = sum_u phi[j, u] over the bounded grid: the mass a full kernel
    at j retains inside the support. Dividing by it removes the edge
    deficiency, so a uniform sample stays exactly uniform at any bandwidth."""
    return _gaussian_lattice(grid, grid, bandwidth).sum(axis=1)


def _stratum_raw_density(
    grid: np.ndarray, centers: np.ndarray, counts: np.ndarray, bandwidth: float
) -> np.ndarray:
    """Unnormalized smoothed weights of one stratum on its age grid."""
    phi = _gaussian_lattice(grid, centers, bandwidth)
    return (phi @ counts) / _boundary_factor(grid, bandwidth)


def _group_by_level(sample: Iterable[FeaturePoint]) -> dict[str, Counter]:
    groups: dict[str, Counter] = {}
    for x in sample:
        groups.setdefault(x.risk_level, Counter())[x.age] += 1
    return groups


def _support_ages_by_level(points: tuple[FeaturePoint, ...]) -> dict[str, np.ndarray]:
    ages: dict[str, list[int]] = {}
    for p in points:
        ages.setdefault(p.risk_level, []).append(p.age)
    return {lvl: np.array(sorted(a)) for lvl, a in ages.items()}


def _validate_sample(groups, support_ages) -> None:
    for lvl, counter in groups.items():
        if lvl not in support_ages:
            raise ValueError(f"sample contains risk level {lvl!r} outside the support")
        valid = set(support_ages[lvl].tolist())
        bad = sorted(set(counter) - valid)
        if bad:
            raise ValueError(
                f"sample ages {bad} at level {lvl!r} are outside the support; "
                "drop them upstream before fitting"
            )


def _lscv_score(groups, support_ages, bandwidth: float) -> float:
    """Pooled least-squares cross-validation score; lower is better.

    Strata are weighted by their sample shares; strata with fewer than two
    observations carry no leave-one-out information and are skipped.
    """
    n_total = sum(sum(c.values()) for c in groups.values())
    score = 0.0
    usable = 0
    for lvl, counter in groups.items():
        n_s = sum(counter.values())
        if n_s < 2:
            continue
        grid = support_ages[lvl]
        centers = np.array(sorted(counter))
        counts = np.array([counter[a] for a in centers], dtype=float)
        phi = _gaussian_lattice(grid, centers, bandwidth)
        corrected = phi / _boundary_factor(grid, bandwidth)[:, None]
        raw = corrected @ counts
        dens = raw / raw.sum()
        term1 = float(np.dot(dens, dens))
        # leave-one-out density at each distinct sample value
        raw_loo = raw[:, None] - corrected  # drop one observation per column
        z_loo = raw_loo.sum(axis=0)
        grid_pos = {a: i for i, a in enumerate(grid.tolist())}
        rows = [grid_pos[a] for a in centers.tolist()]
        loo = raw_loo[rows, np.arange(len(centers))] / z_loo
        term2 = 2.0 / n_s * float(np.dot(counts, loo))
        score += (n_s / n_total) * (term1 - term2)
        usable += n_s
    if usable == 0:
        return np.nan
    return score


def select_bandwidth(
    sample: Sequence[FeaturePoint],
    support: SupportLike,
    grid: Sequence[float] = BANDWIDTH_GRID,
) -> float:
    """Least-squares cross-validated bandwidth over a log-spaced grid.

    Scans ascending and keeps the smallest bandwidth on ties. Falls back to
    1.0 year when no stratum has two observations.
    """
    points = _canonical_points(support)
    groups = _group_by_level(sample)
    support_ages = _support_ages_by_level(points)
    _validate_sample(groups, support_ages)
    best_h, best_score = None, np.inf
    for h in grid:
        s = _lscv_score(groups, support_ages, float(h))
        if np.isnan(s):
            return 1.0
        if s < best_score:
            best_h, best_score = float(h), s
    return best_h if best_h is not None else 1.0


def fit_kernel_density(
    sample: Sequence[FeaturePoint],
    support: SupportLike,
    bandwidth: float | str = "auto",
) -> DensityEstimate:
    """Kernel density estimate of the feature law on a bounded support.

    Within each risk stratum the integer ages are smoothed by a Gaussian
    kernel renormalized over the stratum's age grid; strata are combined by
    their empirical proportions, so the weights always sum to one.

    Parameters
    ----------
    sample : sequence of FeaturePoint
        Observed features; every point must lie in the support.
    support : FeatureSpace or sequence of FeaturePoint
        The grid the estimate lives on.
    bandwidth : positive float or "auto"
        Kernel bandwidth in years; "auto" selects by least-squares
        cross-validation.
    """
    sample = list(sample)
    if not sample:
        raise ValueError("cannot fit a density to an empty sample")
    points = _canonical_points(support)
    groups = _group_by_level(sample)
    support_ages = _support_ages_by_level(points)
    _validate_sample(groups, support_ages)

    if bandwidth == "auto":
        h = select_bandwidth(sample, points)
    else:
        h = float(bandwidth)
        if not (np.isfinite(h) and h > 0.0):
            raise ValueError(f"bandwidth must be positive, got {bandwidth!r}")

    n = len(sample)
    weights_by_level: dict[str, np.ndarray] = {}
    for lvl, ages_grid in support_ages.items():
        counter = groups.get(lvl)
        if counter is None:
            weights_by_level[lvl] = np.zeros(ages_grid.size)
            continue
        n_s = sum(counter.values())
        centers = np.array(sorted(counter))
        counts = np.array([counter[a] for a in centers], dtype=float)
        raw = _stratum_raw_density(ages_grid, centers, counts, h)
        weights_by_level[lvl] = (n_s / n) * (raw / raw.sum())

    weights = np.empty(len(points))
    cursor: dict[str, int] = {lvl: 0 for lvl in support_ages}
    for i, p in enumerate(points):
        j = cursor[p.risk_level]
        weights[i] = weights_by_level[p.risk_level][j]
        cursor[p.risk_level] = j + 1
    return DensityEstimate(points, weights, bandwidth=h)


def tabulated_density(weights: Mapping[FeaturePoint, float]) -> DensityEstimate:
    """Exact tabulated density from a point -> probability map.

    Renormalizes with a warning when the total deviates from 1 by more than
    1e-9; negative weights are an error.
    """
    if not weights:
        raise ValueError("tabulated density needs at least one point")
    pts = tuple(weights.keys())
    w = np.array([weights[p] for p in pts], dtype=float)
    if np.any(w < 0.0):
        raise ValueError("tabulated weights must be nonnegative")
    total = w.sum()
    if total <= 0.0:
        raise ValueError("tabulated weights must have positive total mass")
    if abs(total - 1.0) > 1e-9:
        warnings.warn(
            f"tabulated weights sum to {total:.6g}; renormalizing", stacklevel=2
        )
    return DensityEstimate(pts, w / total, bandwidth=None)


def density_ratio_features(
    f1: DensityEstimate, f0: DensityEstimate, x: FeaturePoint
) -> float:
    """f1(x) / f0(x), the feature-space part of the decision ratio.

    A zero denominator means the uninfected law puts no mass at ``x`` and
    the ratio bound needed by the duration rule fails there.
    """
    w0 = f0.weight(x)
    if w0 <= 0.0:
        raise ZeroDivisionError(
            f"uninfected density is zero at {x}; the density ratio is undefined there"
        )
    return f1.weight(x) / w0


def write_density_csv(est: DensityEstimate, path) -> None:
    """Emit rows ``risk_level,age,weight`` sorted by level then age."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["risk_level", "age", "weight"])
        for p, w in zip(est.points, est.weights):
            writer.writerow([p.risk_level, p.age, repr(float(w))])


def read_density_csv(path) -> DensityEstimate:
    """Read a density table written by :func:`write_density_csv`."""
    table: dict[FeaturePoint, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            table[FeaturePoint(row["risk_level"], int(row["age"]))] = float(row["weight"])
    return tabulated_density(table)
