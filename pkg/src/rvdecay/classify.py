"""Finite-horizon classification of the limit of a ratio series.

The series is resampled on a log-spaced grid over the final decade
``[T/10, T]``.  Three numbers summarise it there:

* ``mean`` and ``std`` of the resampled values, and
* ``drift``: the absolute least-squares slope of value against ``log10 t``,
  i.e. the change per decade.

Measuring the drift over the final decade only keeps the O(1/t) transient
left by an early random time shift out of the verdict.

A class value ``c`` in {-1, 0, 1} is reported only when all three pass their
tolerances; a stable series far from every class value is ``OTHER_FINITE``;
an unstable one is ``NO_LIMIT``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Verdict", "Tolerances", "LimitClassification", "classify", "log_grid"]

CLASS_VALUES = (-1, 0, 1)
MIN_DECADES = 3.0


class Verdict(enum.Enum):
    LIMIT = "limit"
    OTHER_FINITE = "other_finite"
    NO_LIMIT = "no_limit"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class Tolerances:
    tol_mean: float = 0.1
    tol_std: float = 0.05
    tol_drift: float = 0.05
    points_per_decade: int = 64


@dataclass(frozen=True)
class LimitClassification:
    verdict: Verdict
    value: float | None  # class value for LIMIT, window mean for OTHER_FINITE
    mean: float = math.nan
    std: float = math.nan
    drift: float = math.nan
    window: tuple[float, float] = (math.nan, math.nan)
    reason: str = ""

    @property
    def lam(self):
        """Integer class in {-1, 0, 1}, or None."""
        return int(self.value) if self.verdict is Verdict.LIMIT else None

    @property
    def label(self):
        if self.verdict is Verdict.LIMIT:
            return f"{int(self.value):+d}" if self.value else "0"
        return self.verdict.value

    def to_dict(self):
        return {
            "verdict": self.verdict.value,
            "lambda": self.lam,
            "value": self.value,
            "mean": self.mean,
            "std": self.std,
            "drift": self.drift,
            "window_lo": self.window[0],
            "window_hi": self.window[1],
            "reason": self.reason,
        }


def log_grid(t_lo, t_hi, per_decade=64):
    """Log-spaced points from t_lo to t_hi inclusive."""
    n = max(int(math.ceil(per_decade * math.log10(t_hi / t_lo))), 1)
    return np.logspace(math.log10(t_lo), math.log10(t_hi), n + 1)


def classify(t, values, tol: Tolerances | None = None) -> LimitClassification:
    tol = tol or Tolerances()
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size != v.size:
        raise ValueError("t and values differ in length")
    keep = t >= 1.0
    t, v = t[keep], v[keep]
    if t.size < 2 or t[-1] < 10.0 ** MIN_DECADES * (1 - 1e-12):
        return LimitClassification(Verdict.INCONCLUSIVE, None, reason="fewer than 3 decades past t=1")
    T = t[-1]
    grid = log_grid(T / 10.0, T, tol.points_per_decade)
    raw = v[max(np.searchsorted(t, grid[0], side="right") - 1, 0):]
    if not np.all(np.isfinite(raw)):
        return LimitClassification(
            Verdict.INCONCLUSIVE, None, window=(grid[0], T), reason="non-finite values in final window"
        )
    w = np.interp(grid, t, v)
    mean = float(np.mean(w))
    std = float(np.std(w))
    drift = float(abs(np.polyfit(np.log10(grid), w, 1)[0]))
    common = dict(mean=mean, std=std, drift=drift, window=(float(grid[0]), float(T)))
    if std >= tol.tol_std or drift >= tol.tol_drift:
        why = []
        if std >= tol.tol_std:
            why.append(f"std {std:.3g} >= {tol.tol_std}")
        if drift >= tol.tol_drift:
            why.append(f"drift {drift:.3g} >= {tol.tol_drift}")
        return LimitClassification(Verdict.NO_LIMIT, None, reason="; ".join(why), **common)
    c = min(CLASS_VALUES, key=lambda k: abs(mean - k))
    if abs(mean - c) < tol.tol_mean:
        return LimitClassification(Verdict.LIMIT, float(c), reason="stable near class value", **common)
    return LimitClassification(Verdict.OTHER_FINITE, mean, reason="stable away from {-1,0,1}", **common)
