"""Closed-form densities, CDFs, quantiles and inverse-CDF samplers.

Families used by the quarantine model: Weibull (the working incubation
model), lognormal and a two-component Weibull mixture (alternative truths
for simulation studies), and the truncated normal (age laws). All samplers
draw through an explicit ``numpy.random.Generator`` and transform uniforms
by the inverse CDF, so they are exact, rejection-free and reproducible
under a fixed seed.

Every public function accepts scalars or arrays for the evaluation point
and returns a matching shape. Domain violations (negative durations,
quantile levels outside (0, 1)) raise ``ValueError``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "DEFAULT_Y_MAX",
    "WeibullParams",
    "LognormalParams",
    "TruncNormalParams",
    "MixtureParams",
    "weibull_pdf",
    "weibull_cdf",
    "weibull_quantile",
    "weibull_sample",
    "lognormal_pdf",
    "lognormal_cdf",
    "lognormal_quantile",
    "lognormal_sample",
    "truncnormal_pdf",
    "truncnormal_cdf",
    "truncnormal_sample",
    "mixture_pdf",
    "mixture_cdf",
    "mixture_sample",
]

#: Upper cap (days) used wherever a search or integral needs a compact
#: interval. The incubation tails this package fits carry < 1e-7 mass
#: beyond 60 days; callers that change it own the corresponding tail error.
DEFAULT_Y_MAX = 60.0

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _require_positive(name: str, value: float) -> None:
    if not (np.isfinite(value) and value > 0.0):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class WeibullParams:
    """Weibull with shape ``alpha`` and scale ``lambda`` in days."""

    shape: float
    scale: float

    def __post_init__(self) -> None:
        _require_positive("shape", self.shape)
        _require_positive("scale", self.scale)


@dataclass(frozen=True)
class LognormalParams:
    """Lognormal of exp(N(log_mean, log_sd^2)); log_sd is the SD of log Y."""

    log_mean: float
    log_sd: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.log_mean):
            raise ValueError(f"log_mean must be finite, got {self.log_mean!r}")
        _require_positive("log_sd", self.log_sd)


@dataclass(frozen=True)
class TruncNormalParams:
    """Normal(mean, variance) conditioned on the interval [lower, upper]."""

    mean: float
    variance: float
    lower: float
    upper: float

    def __post_init__(self) -> None:
        _require_positive("variance", self.variance)
        if not self.lower < self.upper:
            raise ValueError(f"lower must be < upper, got [{self.lower}, {self.upper}]")
        if self._mass() <= 0.0:
            raise ValueError("truncation interval carries no probability mass")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def _standardized_bounds(self) -> tuple[float, float]:
        return (self.lower - self.mean) / self.sd, (self.upper - self.mean) / self.sd

    def _mass(self) -> float:
        a, b = self._standardized_bounds()
        return float(ndtr(b) - ndtr(a))


@dataclass(frozen=True)
class MixtureParams:
    """Two-component Weibull mixture: weight on component_a."""

    weight: float
    component_a: WeibullParams
    component_b: WeibullParams

    def __post_init__(self) -> None:
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"mixture weight must lie in [0, 1], got {self.weight!r}")


def _as_nonnegative(y) -> np.ndarray:
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0.0):
        raise ValueError("durations must be nonnegative")
    return arr


def _as_open_unit(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("probability levels must lie strictly inside (0, 1)")
    return arr


def _scalar_like(template, value: np.ndarray):
    return float(value) if np.ndim(template) == 0 else value


# ---------------------------------------------------------------------------
# Raw kernels, broadcasting over parameters. Used directly by the modules
# that carry per-feature parameter arrays (covariate-dependent scales).
# ---------------------------------------------------------------------------


def _weibull_pdf(y, shape, scale):
    u = np.asarray(y, dtype=float) / scale
    # numpy's 0**t limits (inf for t<0, 1 for t==0, 0 for t>0) are exactly
    # the Weibull density limits at y=0 for shape <1, ==1, >1
    with np.errstate(divide="ignore"):
        return (shape / scale) * u ** (np.asarray(shape) - 1.0) * np.exp(-(u ** shape))


def _weibull_cdf(y, shape, scale):
    u = np.asarray(y, dtype=float) / scale
    return -np.expm1(-(u ** shape))


def _weibull_quantile(p, shape, scale):
    return scale * (-np.log1p(-np.asarray(p, dtype=float))) ** (1.0 / shape)


def _lognormal_pdf(y, mu, sd):
    arr = np.asarray(y, dtype=float)
    pos = arr > 0.0
    safe = np.where(pos, arr, 1.0)
    z = (np.log(safe) - mu) / sd
    dens = np.exp(-0.5 * z * z) / (safe * sd * _SQRT_2PI)
    return np.where(pos, dens, 0.0)


def _lognormal_cdf(y, mu, sd):
    arr = np.asarray(y, dtype=float)
    pos = arr > 0.0
    safe = np.where(pos, arr, 1.0)
    return np.where(pos, ndtr((np.log(safe) - mu) / sd), 0.0)


def _lognormal_quantile(p, mu, sd):
    return np.exp(mu + sd * ndtri(np.asarray(p, dtype=float)))


def _mixture_pdf(y, weight, shape_a, scale_a, shape_b, scale_b):
    return weight * _weibull_pdf(y, shape_a, scale_a) + (1.0 - weight) * _weibull_pdf(
        y, shape_b, scale_b
    )


def _mixture_cdf(y, weight, shape_a, scale_a, shape_b, scale_b):
    return weight * _weibull_cdf(y, shape_a, scale_a) + (1.0 - weight) * _weibull_cdf(
        y, shape_b, scale_b
    )


# ---------------------------------------------------------------------------
# Public API on the parameter records.
# ---------------------------------------------------------------------------


def weibull_pdf(y, p: WeibullParams):
    """Density (per day) of Weibull(shape, scale) at ``y >= 0``."""
    arr = _as_nonnegative(y)
    return _scalar_like(y, _weibull_pdf(arr, p.shape, p.scale))


def weibull_cdf(y, p: WeibullParams):
    """P(Y <= y) = 1 - exp(-(y/scale)^shape) for ``y >= 0``."""
    arr = _as_nonnegative(y)
    return _scalar_like(y, _weibull_cdf(arr, p.shape, p.scale))


def weibull_quantile(p_level, p: WeibullParams):
    """Inverse CDF: scale * (-ln(1 - p))^(1/shape) for ``p in (0, 1)``."""
    arr = _as_open_unit(p_level)
    return _scalar_like(p_level, _weibull_quantile(arr, p.shape, p.scale))


def weibull_sample(p: WeibullParams, rng: np.random.Generator, size=None):
    """Draw by inverse CDF from a seeded generator."""
    return _weibull_quantile(rng.random(size), p.shape, p.scale)


def lognormal_pdf(y, p: LognormalParams):
    """Lognormal density at ``y >= 0`` (0 at y = 0)."""
    arr = _as_nonnegative(y)
    return _scalar_like(y, _lognormal_pdf(arr, p.log_mean, p.log_sd))


def lognormal_cdf(y, p: LognormalParams):
    """P(Y <= y) = Phi((ln y - log_mean) / log_sd) for ``y >= 0``."""
    arr = _as_nonnegative(y)
    return _scalar_like(y, _lognormal_cdf(arr, p.log_mean, p.log_sd))


def lognormal_quantile(p_level, p: LognormalParams):
    """Inverse CDF: exp(log_mean + log_sd * z_p) for ``p in (0, 1)``."""
    arr = _as_open_unit(p_level)
    return _scalar_like(p_level, _lognormal_quantile(arr, p.log_mean, p.log_sd))


def lognormal_sample(p: LognormalParams, rng: np.random.Generator, size=None):
    """Draw by inverse CDF from a seeded generator."""
    return _lognormal_quantile(rng.random(size), p.log_mean, p.log_sd)


def truncnormal_pdf(y, p: TruncNormalParams):
    """Density of the truncated normal; 0 outside [lower, upper]."""
    arr = np.asarray(y, dtype=float)
    z = (arr - p.mean) / p.sd
    dens = np.exp(-0.5 * z * z) / (p.sd * _SQRT_2PI * p._mass())
    inside = (arr >= p.lower) & (arr <= p.upper)
    return _scalar_like(y, np.where(inside, dens, 0.0))


def truncnormal_cdf(y, p: TruncNormalParams):
    """CDF of the truncated normal, clamped to [0, 1] outside the interval."""
    arr = np.asarray(y, dtype=float)
    a, _ = p._standardized_bounds()
    raw = (ndtr((arr - p.mean) / p.sd) - ndtr(a)) / p._mass()
    return _scalar_like(y, np.clip(raw, 0.0, 1.0))


def truncnormal_sample(p: TruncNormalParams, rng: np.random.Generator, size=None):
    """Inverse-CDF sampling restricted to the truncation interval.

    Exact and rejection-free: a uniform on [Phi(a), Phi(b)] is pushed
    through the normal quantile function.
    """
    a, b = p._standardized_bounds()
    lo, hi = ndtr(a), ndtr(b)
    u = lo + rng.random(size) * (hi - lo)
    return p.mean + p.sd * ndtri(u)


def mixture_pdf(y, p: MixtureParams):
    """Convex combination of the two component densities."""
    arr = _as_nonnegative(y)
    a, b = p.component_a, p.component_b
    return _scalar_like(y, _mixture_pdf(arr, p.weight, a.shape, a.scale, b.shape, b.scale))


def mixture_cdf(y, p: MixtureParams):
    """Convex combination of the two component CDFs."""
    arr = _as_nonnegative(y)
    a, b = p.component_a, p.component_b
    return _scalar_like(y, _mixture_cdf(arr, p.weight, a.shape, a.scale, b.shape, b.scale))


def mixture_sample(p: MixtureParams, rng: np.random.Generator, size=None):
    """Component indicator then inverse CDF within the chosen component."""
    pick_a = rng.random(size) < p.weight
    u = rng.random(size)
    draw_a = _weibull_quantile(u, p.component_a.shape, p.component_a.scale)
    draw_b = _weibull_quantile(u, p.component_b.shape, p.component_b.scale)
    return np.where(pick_a, draw_a, draw_b)
