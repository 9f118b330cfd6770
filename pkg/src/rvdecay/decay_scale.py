"""The decay benchmark F(x) = int_x^1 du/f(u), its inverse and f(F^{-1}(t)).

``F^{-1}(t)`` is the solution of the unperturbed equation y' = -f(y) started
from y(0) = 1, so it is the yardstick every ratio diagnostic divides by.

Two evaluation routes exist.  ``CLOSED_FORM`` uses the explicit antiderivative
of the pure power.  ``NUMERIC`` works for every family: a monotone table of
(x, F(x)) is accumulated cell by cell on a geometric grid with adaptive
quadrature in the variable s = log u (where the integrand u/f(u) is smooth
and of moderate size on each cell), and F^{-1} is found by bracketing on that
table followed by safeguarded Newton steps using dF/dlog(x) = -x/f(x).
"""

from __future__ import annotations

import bisect
import enum
import math
from typing import NamedTuple

import numpy as np
from scipy.integrate import quad

from .errors import DomainError
from .nonlinearity import Family, NonlinearityModel

__all__ = [
    "Mode",
    "DecayScale",
    "AsymptoticEstimate",
    "eval_F",
    "eval_F_inv",
    "eval_fF_inv",
    "asymptotic_F_inv",
]

ASYMPTOTIC_FLOOR = 10.0


class Mode(enum.Enum):
    CLOSED_FORM = "closed_form"
    NUMERIC = "numeric"


class AsymptoticEstimate(NamedTuple):
    value: float
    below_floor: bool


class DecayScale:
    """F, F^{-1} and f o F^{-1} for a fixed nonlinearity.

    The table is built eagerly; extending it below ``x_min`` (for very large
    t) happens lazily and mutates the instance, so do that from one thread.
    """

    def __init__(
        self,
        model: NonlinearityModel,
        mode: Mode | str | None = None,
        x_min: float = 1e-12,
        quad_tol: float = 1e-10,
        cells_per_decade: int = 16,
    ):
        self.model = model
        if mode is None:
            mode = Mode.CLOSED_FORM if model.family is Family.PURE_POWER else Mode.NUMERIC
        self.mode = Mode(mode)
        if self.mode is Mode.CLOSED_FORM and (
            model.family is not Family.PURE_POWER or math.isfinite(model.radius)
        ):
            raise DomainError("closed form requires an unextended pure power")
        self.quad_tol = quad_tol
        self.cells_per_decade = cells_per_decade
        self._beta = model.beta
        self._k = model.a * (model.beta - 1.0)
        self._xs: list[float] = [1.0]
        self._Fs: list[float] = [0.0]
        # F is decreasing in x; bisect wants ascending keys, so keep -x too
        self._neg_xs: list[float] = [-1.0]
        if self.mode is Mode.NUMERIC:
            self._extend_to(x_min)

    # -- table ------------------------------------------------------------
    def _cell_integral(self, lo, hi):
        f = self.model
        val, _ = quad(
            lambda s: math.exp(s) / f(math.exp(s)),
            math.log(lo),
            math.log(hi),
            epsabs=0.0,
            epsrel=self.quad_tol,
            limit=200,
        )
        return val

    def _extend_to(self, x_target):
        step = 10.0 ** (-1.0 / self.cells_per_decade)
        c = self.model.radius
        while self._xs[-1] > x_target:
            hi = self._xs[-1]
            lo = hi * step
            if lo < c < hi:
                lo = c
            self._Fs.append(self._Fs[-1] + self._cell_integral(lo, hi))
            self._xs.append(lo)
            self._neg_xs.append(-lo)

    @property
    def x_min(self):
        return self._xs[-1]

    # -- F ----------------------------------------------------------------
    def F(self, x):
        """F(x) = int_x^1 du/f(u); negative for x > 1."""
        if np.ndim(x):
            return np.array([self.F(v) for v in np.ravel(x)]).reshape(np.shape(x))
        x = float(x)
        if not x > 0 or not math.isfinite(x):
            raise DomainError(f"F is defined for 0 < x < inf, got {x!r}")
        if self.mode is Mode.CLOSED_FORM:
            return math.expm1((1.0 - self._beta) * math.log(x)) / self._k
        if x >= 1.0:
            return -self._cell_integral(1.0, x) if x > 1.0 else 0.0
        if x < self._xs[-1]:
            self._extend_to(x)
        # smallest tabulated xs[i] >= x
        i = bisect.bisect_left(self._neg_xs, -x)
        if self._xs[i] < x:
            i -= 1
        xi = self._xs[i]
        if xi == x:
            return self._Fs[i]
        return self._Fs[i] + self._cell_integral(x, xi)

    def F_inv(self, t):
        """Unique x in (0, 1] with F(x) = t, for t >= 0."""
        if np.ndim(t):
            if self.mode is Mode.CLOSED_FORM:
                t = np.asarray(t, dtype=float)
                if not np.all(t >= 0) or not np.all(np.isfinite(t)):
                    raise DomainError("F^-1 is defined for t >= 0")
                return np.exp(-np.log1p(self._k * t) / (self._beta - 1.0))
            return np.array([self.F_inv(v) for v in np.ravel(t)]).reshape(np.shape(t))
        t = float(t)
        if not t >= 0 or not math.isfinite(t):
            raise DomainError(f"F^-1 is defined for t >= 0, got {t!r}")
        if self.mode is Mode.CLOSED_FORM:
            return math.exp(-math.log1p(self._k * t) / (self._beta - 1.0))
        if t == 0.0:
            return 1.0
        while self._Fs[-1] < t:
            self._extend_to(self._xs[-1] * 1e-4)
        i = bisect.bisect_left(self._Fs, t)  # Fs[i-1] < t <= Fs[i]
        hi, lo = self._xs[i - 1], self._xs[i]
        if self._Fs[i] == t:
            return lo
        return self._newton(t, lo, hi)

    def _newton(self, t, lo, hi):
        f = self.model
        tol = 1e-12 * t
        # log-linear interpolation start inside the bracket
        Flo, Fhi = self.F(lo), self.F(hi)
        w = (t - Fhi) / (Flo - Fhi)
        y = math.log(hi) + w * (math.log(lo) - math.log(hi))
        ylo, yhi = math.log(lo), math.log(hi)
        for _ in range(60):
            x = math.exp(y)
            r = self.F(x) - t
            if abs(r) <= tol:
                return x
            if r > 0:  # F too large -> x too small
                ylo = y
            else:
                yhi = y
            y_new = y + r * f(x) / x
            if not (ylo < y_new < yhi):
                y_new = 0.5 * (ylo + yhi)
            y = y_new
        return math.exp(y)

    def fF_inv(self, t):
        """f(F^{-1}(t)) = -d/dt F^{-1}(t)."""
        if np.ndim(t):
            return self.model.evaluate(self.F_inv(t))
        return self.model(self.F_inv(t))

    # -- asymptotics -------------------------------------------------------
    def ell_closed(self, x):
        """ell(x) of the family (no crossover restriction; used for asymptotics)."""
        m = self.model
        return (m.a * m._slow(x)) ** (-1.0 / (m.beta - 1.0))

    def asymptotic_F_inv(self, t) -> AsymptoticEstimate:
        """(1/(beta-1))^{1/(beta-1)} t^{-1/(beta-1)} ell(t^{-1/(beta-1)})."""
        t = float(t)
        if not t > 0:
            raise DomainError(f"asymptotic F^-1 needs t > 0, got {t!r}")
        b = self._beta
        x = t ** (-1.0 / (b - 1.0))
        below = t < ASYMPTOTIC_FLOOR
        if self.model.family is Family.POWER_LOG_LOGLOG:
            # the slowly varying factor needs log log(1/x) > 0
            below = below or not (x < LOG_GUARD)
            if not x < 1.0 / math.e:
                return AsymptoticEstimate(math.nan, True)
        value = (1.0 / (b - 1.0)) ** (1.0 / (b - 1.0)) * x * self.ell_closed(x)
        return AsymptoticEstimate(value, below)

    def powerloglog_display(self, t):
        """Explicit large-t form of F^{-1} for the power-log-loglog family."""
        m = self.model
        b = m.beta
        out = (1.0 / (m.a * (b - 1.0))) ** (1.0 / (b - 1.0)) * t ** (-1.0 / (b - 1.0))
        if m.beta1:
            out *= (math.log(t) / (b - 1.0)) ** (-m.beta1 / (b - 1.0))
        if m.beta2:
            out *= math.log(math.log(t)) ** (-m.beta2 / (b - 1.0))
        return out


LOG_GUARD = math.exp(-math.e)


def eval_F(scale: DecayScale, x: float) -> float:
    return scale.F(x)


def eval_F_inv(scale: DecayScale, t: float) -> float:
    return scale.F_inv(t)


def eval_fF_inv(scale: DecayScale, t: float) -> float:
    return scale.fF_inv(t)


def asymptotic_F_inv(scale: DecayScale, t: float) -> AsymptoticEstimate:
    return scale.asymptotic_F_inv(t)
