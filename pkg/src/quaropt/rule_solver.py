"""Duration rules from thresholding the decision ratio curve.

For an individual with features x, the curve y -> f1(y|x) * f1(x) / f0(x)
plays the role of a likelihood ratio between "infected, symptomatic at y"
and "uninfected". A threshold c turns it into a duration: quarantine until
the end of the superlevel set {y : curve(y) >= c}. The ceiling c* is the
smallest curve peak over the support; below it every superlevel set is
nonempty. The escape probability is monotone in c, so the threshold that
attains a target escape level is found by bisection, and the resulting
rule minimizes the average duration of uninfected people among all rules
meeting the escape constraint.

Curves for all support points are evaluated in lockstep (shared bisection
and golden-section iterations over numpy arrays), which keeps threshold
solving fast enough to sit inside replicated simulation studies.
"""

from __future__ import annotations

import csv
import json
import warnings as _warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from quaropt.density_estimation import DensityEstimate, FeaturePoint
from quaropt.distributions import DEFAULT_Y_MAX
from quaropt.numerics import golden_section_max, round_half_up

__all__ = [
    "RatioCurve",
    "RatioCurveSet",
    "QuarantineRule",
    "ThresholdSolution",
    "ratio_curve",
    "superlevel_duration",
    "c_star",
    "escape_probability",
    "solve_threshold",
    "optimality_certificate_slack",
    "optimal_rule",
    "write_rule_csv",
    "read_rule_csv",
]

#: Coarse scan used to bracket curve modes and flag multimodality.
_COARSE_N = 256
#: Dense scan used to bracket the rightmost crossing of multimodal curves.
_DENSE_N = 2048
#: Proxy for the open lower end of (0, y_max].
_Y_FLOOR = 1e-9
#: Bisection iterations; 60 days / 2^48 is far below the 1e-8 day target.
_BISECT_ITER = 48


class RatioCurveSet:
    """Decision-ratio curves for every point of a feature support.

    ``law`` provides vectorized ``pdf(y, age)`` and ``cdf(y, age)``;
    ``ratio[i]`` is the feature-density ratio (possibly cost-weighted) at
    ``points[i]``. Curves are cached with their mode location, peak value
    and a multimodality flag (a violated unimodality assumption downgrades
    the superlevel boundary to a dense-grid search for the largest
    crossing).
    """

    def __init__(self, law, points: Sequence[FeaturePoint], ratio, y_max: float = DEFAULT_Y_MAX):
        points = tuple(points)
        if not points:
            raise ValueError("curve set needs a nonempty support")
        if len(set(points)) != len(points):
            raise ValueError("duplicate feature points in curve support")
        ratio = np.asarray(ratio, dtype=float)
        if ratio.shape != (len(points),):
            raise ValueError("one ratio per support point required")
        if np.any(~np.isfinite(ratio)) or np.any(ratio <= 0.0):
            bad = points[int(np.argmin(ratio))]
            raise ValueError(
                f"density ratio must be positive and finite everywhere; offending point {bad}"
            )
        if not (np.isfinite(y_max) and y_max > 0.0):
            raise ValueError(f"y_max must be positive, got {y_max!r}")

        self.law = law
        self.points = points
        self.ratio = ratio
        self.y_max = float(y_max)
        self.ages = np.array([p.age for p in points], dtype=float)
        self._index = {p: i for i, p in enumerate(points)}

        grid = np.linspace(self.y_max / _COARSE_N, self.y_max, _COARSE_N)
        vals = self._values_on(grid)
        interior = (vals[:, 1:-1] > vals[:, :-2]) & (vals[:, 1:-1] > vals[:, 2:])
        self.multimodal = interior.sum(axis=1) >= 2
        argmax = vals.argmax(axis=1)
        lo = np.where(argmax > 0, grid[np.maximum(argmax - 1, 0)], _Y_FLOOR)
        hi = np.where(argmax < _COARSE_N - 1, grid[np.minimum(argmax + 1, _COARSE_N - 1)], self.y_max)
        mode, peak = golden_section_max(self._values_at, lo, hi, tol=1e-8)
        grid_best = vals.max(axis=1)
        use_grid = grid_best > peak
        self.mode = np.where(use_grid, grid[argmax], mode)
        self.peak = np.where(use_grid, grid_best, peak)

        self._dense_grid = np.linspace(self.y_max / _DENSE_N, self.y_max, _DENSE_N)
        self._dense_vals = self._values_on(self._dense_grid) if np.any(self.multimodal) else None
        self.value_at_y_max = vals[:, -1]

    # -- evaluation ---------------------------------------------------------

    def _values_on(self, y_grid: np.ndarray) -> np.ndarray:
        """Curve values on a shared y grid; shape (n_points, len(y_grid))."""
        dens = self.law.pdf(y_grid[None, :], self.ages[:, None])
        return dens * self.ratio[:, None]

    def _values_at(self, y: np.ndarray, rows=None) -> np.ndarray:
        """Curve values at one y per point (lockstep evaluation)."""
        if rows is None:
            return self.law.pdf(y, self.ages) * self.ratio
        return self.law.pdf(y, self.ages[rows]) * self.ratio[rows]

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def c_star(self) -> float:
        """min over the support of each curve's peak value."""
        return float(self.peak.min())

    def curve(self, x: FeaturePoint) -> "RatioCurve":
        i = self._index.get(x)
        if i is None:
            raise ValueError(f"feature point {x} is outside the curve support")
        return RatioCurve(self, i)

    def index_of(self, x: FeaturePoint) -> int:
        i = self._index.get(x)
        if i is None:
            raise ValueError(f"feature point {x} is outside the curve support")
        return i

    # -- superlevel durations -----------------------------------------------

    def _bisect_crossing(self, lo, hi, c: float, rows) -> np.ndarray:
        """Largest y in [lo, hi] with curve >= c, given curve(lo) >= c > curve(hi)."""
        lo = lo.astype(float).copy()
        hi = hi.astype(float).copy()
        for _ in range(_BISECT_ITER):
            mid = 0.5 * (lo + hi)
            keep = self._values_at(mid, rows) >= c
            lo = np.where(keep, mid, lo)
            hi = np.where(keep, hi, mid)
        return lo

    def superlevel_durations(self, c: float) -> np.ndarray:
        """Duration sup{y : curve(y) >= c} per support point (0 when empty)."""
        if not (np.isfinite(c) and c > 0.0):
            raise ValueError(f"threshold must be positive, got {c!r}")
        out = np.zeros(self.size)
        alive = self.peak >= c
        tail = alive & (self.value_at_y_max >= c)
        out[tail] = self.y_max
        mid_rows = alive & ~tail
        uni = np.flatnonzero(mid_rows & ~self.multimodal)
        if uni.size:
            out[uni] = self._bisect_crossing(
                self.mode[uni], np.full(uni.size, self.y_max), c, uni
            )
        multi = np.flatnonzero(mid_rows & self.multimodal)
        if multi.size:
            out[multi] = self._rightmost_crossing(multi, c)
        return out

    def _rightmost_crossing(self, rows: np.ndarray, c: float) -> np.ndarray:
        """Largest crossing on a dense grid for curves with several humps."""
        dv = self._dense_vals[rows]
        ge = dv >= c
        any_ge = ge.any(axis=1)
        out = np.empty(rows.size)
        if np.any(any_ge):
            sel = np.flatnonzero(any_ge)
            k = _DENSE_N - 1 - np.argmax(ge[sel, ::-1], axis=1)
            # k < _DENSE_N - 1 because the y_max column is handled upstream
            out[sel] = self._bisect_crossing(
                self._dense_grid[k], self._dense_grid[k + 1], c, rows[sel]
            )
        if not np.all(any_ge):
            # the whole superlevel set hides between dense points around the
            # refined mode; bracket with the first dense point to its right
            sel = np.flatnonzero(~any_ge)
            r = rows[sel]
            nxt = np.searchsorted(self._dense_grid, self.mode[r], side="right")
            nxt = np.minimum(nxt, _DENSE_N - 1)
            out[sel] = self._bisect_crossing(self.mode[r], self._dense_grid[nxt], c, r)
        return out

    # -- escape probability ---------------------------------------------------

    def aggregate_features(self, infected_features: Sequence[FeaturePoint], weights=None):
        """Collapse a feature list to (support indices, total weight each)."""
        feats = list(infected_features)
        if not feats:
            raise ValueError("escape probability needs a nonempty infected sample")
        idx = np.array([self.index_of(x) for x in feats])
        if weights is None:
            w = np.full(idx.size, 1.0 / idx.size)
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != idx.shape:
                raise ValueError("weights must align with the feature list")
            if np.any(w < 0.0) or w.sum() <= 0.0:
                raise ValueError("weights must be nonnegative with positive total")
            w = w / w.sum()
        agg = np.zeros(self.size)
        np.add.at(agg, idx, w)
        used = np.flatnonzero(agg > 0.0)
        return used, agg[used]

    def escape(self, c: float, used: np.ndarray, agg_weights: np.ndarray) -> float:
        durations = self.superlevel_durations(c)
        detained = self.law.cdf(durations[used], self.ages[used])
        return 1.0 - float(np.dot(agg_weights, detained))


@dataclass(frozen=True)
class RatioCurve:
    """Single-point view into a :class:`RatioCurveSet`."""

    parent: RatioCurveSet
    row: int

    @property
    def x(self) -> FeaturePoint:
        return self.parent.points[self.row]

    @property
    def ratio(self) -> float:
        return float(self.parent.ratio[self.row])

    @property
    def mode(self) -> float:
        return float(self.parent.mode[self.row])

    @property
    def peak(self) -> float:
        return float(self.parent.peak[self.row])

    @property
    def multimodal(self) -> bool:
        return bool(self.parent.multimodal[self.row])

    @property
    def y_max(self) -> float:
        return self.parent.y_max

    def value(self, y):
        arr = np.asarray(y, dtype=float)
        vals = self.parent.law.pdf(arr, np.full(arr.shape, self.parent.ages[self.row])) * self.ratio
        return float(vals) if np.ndim(y) == 0 else vals

    def superlevel_duration(self, c: float) -> float:
        return float(self._one_duration(c))

    def _one_duration(self, c: float) -> float:
        sub = self.parent
        if not (np.isfinite(c) and c > 0.0):
            raise ValueError(f"threshold must be positive, got {c!r}")
        if c > self.peak:
            return 0.0
        if sub.value_at_y_max[self.row] >= c:
            _warnings.warn(
                f"superlevel set at {self.x} reaches y_max={sub.y_max}; "
                "tail mass beyond the cap is folded into the escape bound",
                stacklevel=3,
            )
            return sub.y_max
        rows = np.array([self.row])
        if self.multimodal:
            return float(sub._rightmost_crossing(rows, c)[0])
        return float(
            sub._bisect_crossing(np.array([self.mode]), np.array([sub.y_max]), c, rows)[0]
        )


def ratio_curve(
    x: FeaturePoint,
    model,
    f1: DensityEstimate,
    f0: DensityEstimate,
    y_max: float = DEFAULT_Y_MAX,
) -> RatioCurve:
    """Decision-ratio curve at one feature point.

    ``model`` is any conditional law with vectorized ``pdf(y, age)`` /
    ``cdf(y, age)``; the feature part of the ratio comes from the two
    density estimates.
    """
    w0 = f0.weight(x)
    if w0 <= 0.0:
        raise ZeroDivisionError(
            f"uninfected density is zero at {x}; the ratio curve is undefined there"
        )
    ratio = f1.weight(x) / w0
    if ratio <= 0.0:
        raise ValueError(
            f"infected density is zero at {x}; the ratio curve has no peak there"
        )
    curve_set = RatioCurveSet(model, (x,), np.array([ratio]), y_max=y_max)
    return curve_set.curve(x)


def superlevel_duration(curve: RatioCurve, c: float) -> float:
    """Duration assigned by threshold ``c``: sup{y : curve(y) >= c}.

    Returns 0 when the threshold clears the peak (empty superlevel set) and
    y_max (with a tail warning) when the curve still exceeds ``c`` at the
    cap; otherwise the right-branch crossing located to 1e-8 days.
    """
    return curve.superlevel_duration(c)


def c_star(curves) -> float:
    """Smallest curve peak over the support: thresholds above it empty some
    superlevel set, so admissible thresholds live in (0, c_star]."""
    if isinstance(curves, RatioCurveSet):
        return curves.c_star
    peaks = [c.peak for c in curves]
    if not peaks:
        raise ValueError("c_star needs at least one curve")
    return float(min(peaks))


def escape_probability(
    c: float,
    curves: RatioCurveSet,
    infected_features: Sequence[FeaturePoint],
    weights=None,
) -> float:
    """Escape probability of the duration rule induced by threshold ``c``.

    The average of 1 - F(duration | x) over the infected features; pass
    ``weights`` to evaluate a weighted population instead of an empirical
    sample. Nondecreasing in ``c``.
    """
    used, agg = curves.aggregate_features(infected_features, weights)
    return curves.escape(c, used, agg)


@dataclass(frozen=True)
class ThresholdSolution:
    """Solved threshold and the escape level it achieves."""

    c0: float
    c_star: float
    achieved_escape: float
    epsilon: float
    fallback_used: bool
    warnings: tuple[str, ...] = ()
    n_condition_violations: int = 0
    n_support: int = 0
    n_certificate_violations: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.c0 <= self.c_star * (1.0 + 1e-12):
            raise ValueError(
                f"threshold {self.c0!r} outside the admissible interval (0, {self.c_star!r}]"
            )

    def to_json(self) -> str:
        return json.dumps(
            {
                "c0": self.c0,
                "c_star": self.c_star,
                "achieved_escape": self.achieved_escape,
                "epsilon": self.epsilon,
                "fallback_used": self.fallback_used,
                "warnings": list(self.warnings),
                "n_condition_violations": self.n_condition_violations,
                "n_support": self.n_support,
                "n_certificate_violations": self.n_certificate_violations,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ThresholdSolution":
        d = json.loads(text)
        return cls(
            c0=d["c0"],
            c_star=d["c_star"],
            achieved_escape=d["achieved_escape"],
            epsilon=d["epsilon"],
            fallback_used=d["fallback_used"],
            warnings=tuple(d.get("warnings", ())),
            n_condition_violations=d.get("n_condition_violations", 0),
            n_support=d.get("n_support", 0),
            n_certificate_violations=d.get("n_certificate_violations", 0),
        )


#: |achieved escape - epsilon| accepted by the bisection.
ESCAPE_TOL = 1e-6
#: Relative c-interval width at which the bisection stops.
C_INTERVAL_TOL = 1e-10


def optimality_certificate_slack(curves: RatioCurveSet, c0: float) -> np.ndarray:
    """Per-point slack of a sufficient condition for global optimality.

    The thresholded rule quarantines [0, t(x)] even where the ratio curve
    runs below the threshold (left of its rising branch). Charging that
    stretch at the threshold rate is justified exactly when

        c0 * t(x) <= ratio(x) * F(t(x) | x)      for every x,

    i.e. the detained probability, valued at 1/c0 per unit, pays for the
    whole interval. Nonnegative slack everywhere makes the rule a pointwise
    minimizer of the Lagrangian and hence (by weak duality) the global
    minimum among all feasible rules. Negative slack at a point means the
    escape target sits too close to that curve's peak: a rule that skips
    quarantining there entirely can beat the thresholded one, a regime the
    optimality theory excludes by requiring the target to be small enough.
    """
    durations = curves.superlevel_durations(c0)
    detained = curves.law.cdf(durations, curves.ages)
    return curves.ratio * detained - c0 * durations


def solve_threshold(
    epsilon: float,
    curves: RatioCurveSet,
    infected_features: Sequence[FeaturePoint],
    weights=None,
) -> ThresholdSolution:
    """Solve escape(c) = epsilon for c in (0, c_star] by bisection.

    escape is nondecreasing and continuous in c, so bisection maintains a
    bracket [feasible, infeasible]. When even c_star cannot escape as much
    as epsilon the equation has no root in the interval; the threshold
    falls back to c_star (shortest durations the construction allows) and
    the solution is flagged. On interval-width termination the feasible
    end is returned, keeping the achieved escape at or below epsilon.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    used, agg = curves.aggregate_features(infected_features, weights)
    cs = curves.c_star
    notes: list[str] = []
    n_multi = int(np.count_nonzero(curves.multimodal))
    if n_multi:
        notes.append(
            f"condition violation: {n_multi} of {curves.size} ratio curves have "
            "multiple interior maxima; durations use the largest crossing"
        )

    esc_star = curves.escape(cs, used, agg)
    if abs(esc_star - epsilon) < ESCAPE_TOL:
        c0, achieved, fallback = cs, esc_star, False
    elif esc_star < epsilon:
        notes.append(
            f"escape at c_star is {esc_star:.6g} < epsilon={epsilon:g}; "
            "took c0 = c_star (constraint is slack)"
        )
        c0, achieved, fallback = cs, esc_star, True
    else:
        lo = cs * 1e-12
        esc_lo = curves.escape(lo, used, agg)
        if esc_lo > epsilon:
            notes.append(
                f"escape cannot reach epsilon={epsilon:g} within y_max="
                f"{curves.y_max:g}; best achievable is {esc_lo:.6g}"
            )
            c0, achieved, fallback = lo, esc_lo, False
        else:
            hi = cs
            c0 = achieved = None
            while True:
                mid = 0.5 * (lo + hi)
                esc_mid = curves.escape(mid, used, agg)
                if abs(esc_mid - epsilon) < ESCAPE_TOL:
                    c0, achieved, fallback = mid, esc_mid, False
                    break
                if esc_mid > epsilon:
                    hi = mid
                else:
                    lo = mid
                if hi - lo < C_INTERVAL_TOL * cs:
                    c0, achieved, fallback = lo, curves.escape(lo, used, agg), False
                    break

    durations = curves.superlevel_durations(c0)
    n_capped = int(np.count_nonzero(durations >= curves.y_max))
    if n_capped:
        notes.append(
            f"{n_capped} durations hit the y_max={curves.y_max:g} cap; the tail "
            "mass beyond the cap is folded into the escape as an upper bound"
        )
    return ThresholdSolution(
        c0=float(c0),
        c_star=float(cs),
        achieved_escape=float(achieved),
        epsilon=float(epsilon),
        fallback_used=fallback,
        warnings=tuple(notes),
        n_condition_violations=n_multi,
        n_support=curves.size,
    )


@dataclass(frozen=True)
class QuarantineRule:
    """Map from feature points to quarantine durations in days."""

    points: tuple[FeaturePoint, ...]
    durations: np.ndarray
    provenance: str = "custom"
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        pts = tuple(self.points)
        d = np.asarray(self.durations, dtype=float).copy()
        if d.shape != (len(pts),):
            raise ValueError("one duration per feature point required")
        if np.any(d < 0.0) or np.any(~np.isfinite(d)):
            raise ValueError("durations must be finite and nonnegative")
        if len(set(pts)) != len(pts):
            raise ValueError("duplicate feature points in rule support")
        order = sorted(range(len(pts)), key=lambda i: pts[i])
        pts = tuple(pts[i] for i in order)
        d = d[list(order)]
        d.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "durations", d)
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(pts)})

    def duration(self, x: FeaturePoint) -> float:
        i = self._index.get(x)
        if i is None:
            raise ValueError(f"rule has no duration for {x}")
        return float(self.durations[i])

    def durations_at(self, xs: Iterable[FeaturePoint]) -> np.ndarray:
        return np.array([self.duration(x) for x in xs])

    @property
    def durations_rounded(self) -> np.ndarray:
        return round_half_up(self.durations)

    def defined_on(self, xs: Iterable[FeaturePoint]) -> bool:
        return all(x in self._index for x in xs)


def optimal_rule(
    epsilon: float,
    f1: DensityEstimate,
    f0: DensityEstimate,
    model,
    infected_features: Sequence[FeaturePoint],
    weight: Mapping[FeaturePoint, float] | None = None,
    y_max: float = DEFAULT_Y_MAX,
    infected_weights=None,
) -> tuple[QuarantineRule, ThresholdSolution]:
    """The duration rule that meets the escape bound at minimum average cost.

    Builds the decision-ratio curves over the shared support of ``f1`` and
    ``f0``, solves for the threshold attaining escape = ``epsilon``, and
    reads off the superlevel durations. A ``weight`` map (cost of one
    quarantine day per feature point, bounded away from 0 and infinity)
    turns the objective into a weighted average duration: it simply scales
    the curve denominators, so a constant weight leaves the rule unchanged.
    ``infected_weights`` (aligned with ``infected_features``) evaluates the
    escape on a weighted sample, e.g. aggregated feature counts.
    """
    if f1.points != f0.points:
        raise ValueError("f1 and f0 must be tabulated on the same support")
    pts = f0.points
    w0 = f0.weights.copy()
    if np.any(w0 <= 0.0):
        bad = pts[int(np.argmin(w0))]
        raise ZeroDivisionError(
            f"uninfected density is zero at {bad}; the ratio curve is undefined there"
        )
    w1 = f1.weights
    if np.any(w1 <= 0.0):
        bad = pts[int(np.argmin(w1))]
        raise ValueError(
            f"infected density is zero at {bad}; no admissible threshold exists there"
        )
    if weight is not None:
        try:
            cost = np.array([weight[p] for p in pts], dtype=float)
        except KeyError as exc:
            raise ValueError(f"weight map is missing feature point {exc}") from exc
        if np.any(~np.isfinite(cost)) or np.any(cost <= 0.0):
            raise ValueError("weights must be positive and finite on the whole support")
        w0 = w0 * cost
    curves = RatioCurveSet(model, pts, w1 / w0, y_max=y_max)
    solution = solve_threshold(epsilon, curves, infected_features, weights=infected_weights)
    durations = curves.superlevel_durations(solution.c0)
    rule = QuarantineRule(
        points=pts,
        durations=durations,
        provenance=f"optimal(c0={solution.c0:.8g}, epsilon={epsilon:g})",
    )
    return rule, solution


def write_rule_csv(rule: QuarantineRule, path) -> None:
    """Emit ``risk_level,age,duration_days_fractional,duration_days_rounded``."""
    rounded = rule.durations_rounded
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["risk_level", "age", "duration_days_fractional", "duration_days_rounded"]
        )
        for p, d, r in zip(rule.points, rule.durations, rounded):
            writer.writerow([p.risk_level, p.age, repr(float(d)), int(r)])


def read_rule_csv(path, provenance: str = "custom") -> QuarantineRule:
    """Read a rule written by :func:`write_rule_csv`."""
    pts: list[FeaturePoint] = []
    durs: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            pts.append(FeaturePoint(row["risk_level"], int(row["age"])))
            durs.append(float(row["duration_days_fractional"]))
    if not pts:
        raise ValueError(f"rule file {path} holds no rows")
    return QuarantineRule(tuple(pts), np.array(durs), provenance=provenance)
