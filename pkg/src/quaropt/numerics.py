"""Small numerical helpers shared across modules."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["round_half_up", "quantile_index", "golden_section_max"]

#: Inverse golden ratio, the interval-reduction factor of golden-section search.
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def round_half_up(d):
    """Round to the nearest integer with halves going up (7.5 -> 8).

    Works on scalars and arrays; durations are nonnegative so no sign
    handling is needed.
    """
    return np.floor(np.asarray(d, dtype=float) + 0.5)


def quantile_index(n: int, p: float) -> int:
    """0-based order-statistic index ceil(n*p) - 1 of the p-th sample quantile.

    The epsilon guard keeps ceil from overshooting when n*p is an integer up
    to float rounding (e.g. 100 * 0.95 == 95.00000000000001).
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must be in (0, 1), got {p}")
    t = n * p
    k = math.ceil(t - 1e-9 * max(1.0, abs(t)))
    return min(max(k, 1), n) - 1


def golden_section_max(f, lo, hi, *, tol: float = 1e-9):
    """Vectorized golden-section maximization on per-row brackets.

    ``f`` maps an array of positions (one per row) to an array of values;
    ``lo`` and ``hi`` are arrays of bracket endpoints. All rows iterate in
    lockstep with one ``f`` call per iteration, so the cost is independent
    of the row count. Returns ``(x, f(x))`` at the located maximizer.
    """
    a = np.asarray(lo, dtype=float).copy()
    b = np.asarray(hi, dtype=float).copy()
    if np.any(b < a):
        raise ValueError("bracket must satisfy lo <= hi")
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1 = f(x1)
    f2 = f(x2)
    width0 = float(np.max(b - a, initial=0.0))
    n_iter = 0 if width0 <= tol else int(math.ceil(math.log(tol / width0) / math.log(_INVPHI)))
    for _ in range(n_iter):
        right = f2 > f1  # maximum sits in [x1, b]; otherwise in [a, x2]
        a = np.where(right, x1, a)
        b = np.where(right, b, x2)
        keep_x, keep_f = np.where(right, x2, x1), np.where(right, f2, f1)
        fresh_x = np.where(right, a + _INVPHI * (b - a), b - _INVPHI * (b - a))
        fresh_f = f(fresh_x)
        x1 = np.where(right, keep_x, fresh_x)
        f1 = np.where(right, keep_f, fresh_f)
        x2 = np.where(right, fresh_x, keep_x)
        f2 = np.where(right, fresh_f, keep_f)
    x = np.where(f1 > f2, x1, x2)
    return x, f(x)
