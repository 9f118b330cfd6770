"""Forcing terms g(t) and noise intensities sigma(t).

Besides simple decaying kinds this module builds two extreme forcings that
still preserve the decay rate:

* an oscillating forcing ``Gamma(t) sin(I(t)^n)`` with ``I = int_0^t Gamma``,
  whose integral converges only through cancellation, and
* a spiked forcing obtained by adding C^1 cubic bumps of height ~Gamma(n) and
  rapidly shrinking width to an integrable base rate.

Every kind is an immutable object; evaluation is reentrant.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import minimize_scalar
from scipy.special import gamma as gamma_fn

from .decay_scale import DecayScale
from .errors import DomainError, NotSquareIntegrableError, TailUndefinedError
from .nonlinearity import NonlinearityModel

__all__ = [
    "GammaSpec",
    "Perturbation",
    "ZeroForcing",
    "PowerDecay",
    "ScaledDerivativeRate",
    "ZeroLimitSynthetic",
    "Oscillating",
    "Spiked",
    "Sampled",
    "PowerBase",
    "RateBase",
    "SpikeConstruction",
    "bump",
    "bump_dx",
    "NoiseIntensity",
    "ZeroNoise",
    "PowerDecayNoise",
    "CompactNoise",
    "SpikedSquare",
    "SampledNoise",
    "eval_g",
    "tail_integral_g",
    "build_spiked",
    "varsigma",
    "default_oscillation_power",
    "load_table",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _gauss(fn, lo, hi):
    """16-point Gauss-Legendre on each [lo_i, hi_i] (vectorised over i)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = mid[..., None] + half[..., None] * _GL_X
    return half * np.sum(_GL_W * fn(nodes), axis=-1)


def load_table(path):
    """Read a two-column CSV (t, value) with strictly increasing t."""
    ts, vs = [], []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                ts.append(float(row[0]))
                vs.append(float(row[1]))
            except ValueError:
                if ts:
                    raise
                continue  # header line
    ts, vs = np.asarray(ts), np.asarray(vs)
    if ts.size < 2 or np.any(np.diff(ts) <= 0):
        raise DomainError(f"{path}: t column must be strictly increasing with >= 2 rows")
    return ts, vs


# ---------------------------------------------------------------------------
# Growth functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaSpec:
    """Increasing growth function Gamma with Gamma(t) -> inf.

    ``name`` is one of ``"t"``, ``"1+t"``, ``"t^2"``, ``"exp"`` or
    ``"table"``; tables are linearly interpolated and extrapolated with the
    last slope.
    """

    name: str = "1+t"
    table_t: tuple | None = None
    table_v: tuple | None = None

    def __post_init__(self):
        if self.name not in ("t", "1+t", "t^2", "exp", "table"):
            raise DomainError(f"unknown growth function {self.name!r}")
        if self.name == "table":
            ts = np.asarray(self.table_t, dtype=float)
            vs = np.asarray(self.table_v, dtype=float)
            if ts.size < 2 or np.any(np.diff(ts) <= 0) or np.any(np.diff(vs) <= 0):
                raise DomainError("Gamma table must be strictly increasing in t and value")
            if ts[0] != 0.0:
                raise DomainError("Gamma table must start at t = 0")

    @classmethod
    def from_table(cls, ts, vs):
        return cls("table", tuple(map(float, ts)), tuple(map(float, vs)))

    def value(self, t):
        n = self.name
        if n == "t":
            return t
        if n == "1+t":
            return 1.0 + t
        if n == "t^2":
            return t * t
        if n == "exp":
            return np.exp(t)
        ts, vs = np.asarray(self.table_t), np.asarray(self.table_v)
        slope = (vs[-1] - vs[-2]) / (ts[-1] - ts[-2])
        return np.where(t <= ts[-1], np.interp(t, ts, vs), vs[-1] + slope * (t - ts[-1]))

    def derivative(self, t):
        n = self.name
        if n == "t" or n == "1+t":
            return np.ones_like(t) if np.ndim(t) else 1.0
        if n == "t^2":
            return 2.0 * t
        if n == "exp":
            return np.exp(t)
        ts, vs = np.asarray(self.table_t), np.asarray(self.table_v)
        slopes = np.diff(vs) / np.diff(ts)
        idx = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, slopes.size - 1)
        return slopes[idx]

    def integral(self, t):
        """I(t) = int_0^t Gamma."""
        n = self.name
        if n == "t":
            return 0.5 * t * t
        if n == "1+t":
            return t + 0.5 * t * t
        if n == "t^2":
            return t ** 3 / 3.0
        if n == "exp":
            return np.expm1(t)
        ts, vs = np.asarray(self.table_t), np.asarray(self.table_v)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (vs[1:] + vs[:-1]) * np.diff(ts))])
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, ts.size - 1)
        base = ts[idx]
        out = cum[idx] + 0.5 * (vs[idx] + self.value(t)) * (t - base)
        return out if out.ndim else float(out)

    def to_dict(self):
        d = {"name": self.name}
        if self.name == "table":
            d["t"] = list(self.table_t)
            d["value"] = list(self.table_v)
        return d


def default_oscillation_power(beta):
    """Smallest integer n >= (2 beta - 1)/(beta - 1)."""
    return int(math.ceil((2.0 * beta - 1.0) / (beta - 1.0) - 1e-12))


# ---------------------------------------------------------------------------
# Forcing terms
# ---------------------------------------------------------------------------


class Perturbation:
    """Continuous forcing g on [0, horizon].

    Subclasses override ``__call__`` and whichever of ``tail``, ``partial``,
    ``max_step``, ``breakpoints`` and ``envelope`` they can do better than
    the generic fallbacks.
    """

    kind = "abstract"
    horizon = math.inf

    def _check(self, t):
        if not (0.0 <= t <= self.horizon):
            raise DomainError(f"{self.kind}: t={t!r} outside [0, {self.horizon}]")

    def __call__(self, t):
        raise NotImplementedError

    def values(self, ts):
        return np.array([self(float(t)) for t in np.ravel(ts)])

    def tail(self, t):
        """int_t^inf g(s) ds."""
        raise TailUndefinedError(f"{self.kind}: tail undefined")

    def tail_bound(self, t):
        """Upper bound for |tail(s)| over s near t (defaults to |tail(t)|)."""
        return abs(self.tail(t))

    def envelope(self, t):
        """Upper bound for |g(s)| over s near t (defaults to |g(t)|)."""
        return abs(self(t))

    def partial(self, t):
        """int_0^t g(s) ds."""
        self._check(t)
        pts = [b for b in self.breakpoints(0.0, t) if 0.0 < b < t]
        val, _ = quad(self, 0.0, t, points=pts[:50] or None, limit=500)
        return val

    def max_step(self, t):
        """Largest integrator step that still resolves g near t."""
        return math.inf

    def breakpoints(self, t0, t1):
        """Times in (t0, t1] where the integrator must land exactly."""
        return []

    def impulses(self, t0, t1):
        """(time, mass) pairs in (t0, t1] for features too narrow to integrate."""
        return []

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True, eq=False)
class ZeroForcing(Perturbation):
    kind = "zero"

    def __call__(self, t):
        return 0.0

    def values(self, ts):
        return np.zeros(np.size(ts))

    def tail(self, t):
        return 0.0

    def partial(self, t):
        return 0.0


@dataclass(frozen=True, eq=False)
class PowerDecay(Perturbation):
    """g(t) = c (1 + t)^(-p)."""

    c: float = 1.0
    p: float = 2.0
    kind = "power_decay"

    def __call__(self, t):
        self._check(t)
        return self.c * (1.0 + t) ** (-self.p)

    def values(self, ts):
        return self.c * (1.0 + np.asarray(ts, dtype=float)) ** (-self.p)

    def tail(self, t):
        if self.p <= 1 and self.c != 0:
            raise TailUndefinedError(f"power_decay with p={self.p} <= 1: tail undefined")
        if self.c == 0:
            return 0.0
        return self.c * (1.0 + t) ** (1.0 - self.p) / (self.p - 1.0)

    def partial(self, t):
        if self.p == 1:
            return self.c * math.log1p(t)
        return self.c * (1.0 - (1.0 + t) ** (1.0 - self.p)) / (self.p - 1.0)

    def to_dict(self):
        return {"kind": self.kind, "c": self.c, "p": self.p}


@dataclass(frozen=True, eq=False)
class ScaledDerivativeRate(Perturbation):
    """g(t) = c f(F^{-1}(t)), the critical size for the derivative ratio."""

    scale: DecayScale
    c: float = 1.0
    kind = "scaled_derivative_rate"

    def __call__(self, t):
        self._check(t)
        return self.c * self.scale.fF_inv(t)

    def tail(self, t):
        return self.c * self.scale.F_inv(t)

    def partial(self, t):
        return self.c * (1.0 - self.scale.F_inv(t))

    def to_dict(self):
        return {"kind": self.kind, "c": self.c}


@dataclass(frozen=True, eq=False)
class ZeroLimitSynthetic(Perturbation):
    """g = xi d' + f(xi d) with d(t) = exp(-t^2); x(t) = xi d(t) solves the ODE."""

    model: NonlinearityModel
    xi: float = 1.0
    kind = "zero_limit_synthetic"

    def exact_solution(self, t):
        return self.xi * math.exp(-t * t)

    def __call__(self, t):
        self._check(t)
        d = math.exp(-t * t)
        return self.xi * (-2.0 * t * d) + self.model(self.xi * d)

    def tail(self, t):
        f, xi = self.model, self.xi
        rest, _ = quad(lambda s: f(xi * math.exp(-s * s)), t, math.inf, epsabs=1e-300, limit=200)
        return -xi * math.exp(-t * t) + rest

    def partial(self, t):
        return self.tail(0.0) - self.tail(t)

    def to_dict(self):
        return {"kind": self.kind, "xi": self.xi}


# -- oscillating integrals ----------------------------------------------------
#
# After u = I(t)^n the forcing integrates as int k(u) sin(u) du with
# k(u) = u^{-(1-1/n)}/n.  Equivalently, with v = I(t): int sin(v^n) dv.

_U_ASYM = 40.0 * math.pi
_U_ABS = 2000.0 * math.pi


def _osc_asymptotic_tail(U, n):
    """int_U^inf k(u) sin u du by repeated integration by parts, plus bound."""
    alpha = 1.0 - 1.0 / n
    deriv = U ** (-alpha)  # k-derivatives without the 1/n, starting at order 0
    coef = 1.0
    total = 0j
    ipow = 1j
    prev = math.inf
    for k in range(60):
        term = ipow * deriv
        if abs(deriv) > prev:  # asymptotic series starts to diverge
            break
        total += term
        prev = abs(deriv)
        coef = -(alpha + k)
        deriv = deriv * coef / U
        ipow *= 1j
        if abs(deriv) < 1e-18 * abs(total):
            break
    phase = complex(math.cos(U), math.sin(U))
    return (phase * total).imag / n, 2.0 * abs(deriv) / n


def oscillating_tail(U, n):
    """int_U^inf k(u) sin u du for k(u) = u^{-(1-1/n)}/n, and an error bound."""
    if math.isinf(U):
        return 0.0, 0.0
    if U >= _U_ASYM:
        return _osc_asymptotic_tail(U, n)
    asym, err = _osc_asymptotic_tail(_U_ASYM, n)
    with warnings.catch_warnings():
        # asking for 1e-14 trips a roundoff warning; the reported error is kept
        warnings.simplefilter("ignore", IntegrationWarning)
        head, herr = quad(
            lambda v: math.sin(v ** n), U ** (1.0 / n), _U_ASYM ** (1.0 / n), epsabs=1e-14, epsrel=1e-12, limit=1000
        )
    return head + asym, err + herr


def oscillating_total(n):
    """int_0^inf k(u) sin u du = Gamma(1 + 1/n) sin(pi/(2n))."""
    return float(gamma_fn(1.0 + 1.0 / n) * math.sin(math.pi / (2.0 * n)))


def oscillating_abs_partial(U, n):
    """int_0^U k(u) |sin u| du."""
    inv = 1.0 / n
    if U <= math.pi:
        val, _ = quad(lambda v: abs(math.sin(v ** n)), 0.0, U ** inv, limit=200)
        return val
    first, _ = quad(lambda v: math.sin(v ** n), 0.0, math.pi ** inv, limit=200)
    kfun = lambda u: u ** (inv - 1.0) * np.abs(np.sin(u)) * inv
    Ucap = min(U, _U_ABS)
    j_last = int(Ucap // math.pi)
    js = np.arange(1, j_last)
    total = first + float(np.sum(_gauss(kfun, js * math.pi, (js + 1) * math.pi)))
    tail_lo = max(j_last, 1) * math.pi
    total += float(_gauss(kfun, np.array([tail_lo]), np.array([Ucap]))[0])
    if U > _U_ABS:
        # |sin| averages 2/pi over each half period; error <= pi k(_U_ABS)
        total += (2.0 / math.pi) * (U ** inv - _U_ABS ** inv)
    return total


@dataclass(frozen=True, eq=False)
class Oscillating(Perturbation):
    """g(t) = Gamma(t) sin(I(t)^n), I(t) = int_0^t Gamma.

    ``n`` defaults to the smallest integer >= (2 beta - 1)/(beta - 1) when
    built through :meth:`for_model`.  The oscillation phase I(t)^n loses
    double precision once it exceeds ~1e15; beyond that point values of g
    and of the tail are only meaningful through their envelopes.
    """

    gamma: GammaSpec = field(default_factory=GammaSpec)
    n: int = 3
    steps_per_period: int = 24
    kind = "oscillating"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise DomainError("oscillation power n must be an integer >= 2")

    @classmethod
    def for_model(cls, model, gamma=None, n=None):
        return cls(gamma or GammaSpec(), n or default_oscillation_power(model.beta))

    def phase(self, t):
        return float(self.gamma.integral(t)) ** self.n

    def __call__(self, t):
        self._check(t)
        return float(self.gamma.value(t)) * math.sin(self.phase(t))

    def values(self, ts):
        ts = np.asarray(ts, dtype=float)
        return self.gamma.value(ts) * np.sin(self.gamma.integral(ts) ** self.n)

    def k_envelope(self, t):
        """k(I(t)^n) = I(t)^{-(n-1)}/n."""
        I = float(self.gamma.integral(t))
        return math.inf if I == 0 else I ** (-(self.n - 1)) / self.n

    def tail(self, t):
        return oscillating_tail(self.phase(t), self.n)[0]

    def tail_with_error(self, t):
        return oscillating_tail(self.phase(t), self.n)

    def tail_bound(self, t):
        # |int_U^inf k sin| <= k(U) + int_U^inf |k'| = 2 k(U)
        U = self.phase(t)
        if U < _U_ASYM:
            val, err = oscillating_tail(U, self.n)
            return abs(val) + err
        return 2.0 * self.k_envelope(t)

    def envelope(self, t):
        return float(self.gamma.value(t))

    def partial(self, t):
        return oscillating_total(self.n) - self.tail(t)

    def abs_partial(self, t):
        """int_0^t |g(s)| ds."""
        return oscillating_abs_partial(self.phase(t), self.n)

    def phase_rate(self, t):
        I = float(self.gamma.integral(t))
        return self.n * I ** (self.n - 1) * float(self.gamma.value(t))

    def max_step(self, t):
        rate = self.phase_rate(t)
        if rate <= 0:
            return 0.1
        return min(0.1, 2.0 * math.pi / rate / self.steps_per_period)

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma.to_dict(), "n": self.n}


# -- spikes -------------------------------------------------------------------

# relative spike width below which the integrator treats a spike as a jump
IMPULSE_WIDTH = 1e-8


def bump(x, a):
    """Unit-height C^1 bump h_s(x, a, 1) on [0, 2a] (zero outside)."""
    x = np.asarray(x, dtype=float)
    y = np.where(x > a, 2.0 * a - x, x)
    s = (y - a) / a
    out = 1.0 - 3.0 * s * s - 2.0 * s * s * s
    return np.where((x >= 0) & (x <= 2.0 * a), out, 0.0)


def bump_dx(x, a):
    """d/dx of :func:`bump`."""
    x = np.asarray(x, dtype=float)
    right = x > a
    y = np.where(right, 2.0 * a - x, x)
    s = (y - a) / a
    d = (-6.0 * s - 6.0 * s * s) / a
    d = np.where(right, -d, d)
    return np.where((x >= 0) & (x <= 2.0 * a), d, 0.0)


@dataclass(frozen=True, eq=False)
class PowerBase:
    """Base rate k_s(t) = c (1 + t)^(-p), p > 1."""

    c: float = 1.0
    p: float = 2.0

    def __post_init__(self):
        if not (self.c > 0 and self.p > 1):
            raise DomainError("power base needs c > 0 and p > 1 to be integrable")

    def value(self, t):
        return self.c * (1.0 + np.asarray(t, dtype=float)) ** (-self.p)

    def scalar(self, t):
        return self.c * (1.0 + t) ** (-self.p)

    def derivative(self, t):
        return -self.p * self.c * (1.0 + np.asarray(t, dtype=float)) ** (-self.p - 1.0)

    def tail(self, t):
        return self.c * (1.0 + np.asarray(t, dtype=float)) ** (1.0 - self.p) / (self.p - 1.0)

    def integral(self, a, b):
        return self.tail(a) - self.tail(b)

    def to_dict(self):
        return {"kind": "power", "c": self.c, "p": self.p}


@dataclass(frozen=True, eq=False)
class RateBase:
    """Base rate k_s(t) = f(F^{-1}(t)) / (1 + t)."""

    scale: DecayScale

    def scalar(self, t):
        return self.scale.fF_inv(t) / (1.0 + t)

    def value(self, t):
        if np.ndim(t):
            t = np.asarray(t, dtype=float)
            return self.scale.fF_inv(t) / (1.0 + t)
        return self.scalar(float(t))

    def derivative(self, t):
        if np.ndim(t):
            return np.array([self.derivative(float(v)) for v in np.ravel(t)]).reshape(np.shape(t))
        m = self.scale.model
        x = self.scale.F_inv(float(t))
        fx = m(x)
        return -m.derivative(x) * fx / (1.0 + t) - fx / (1.0 + t) ** 2

    def integral(self, a, b):
        if np.ndim(a) or np.ndim(b):
            a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
            return np.array([self.integral(x, y) for x, y in zip(a.ravel(), b.ravel())]).reshape(a.shape)
        return quad(self.scalar, float(a), float(b), epsrel=1e-12, limit=200)[0]

    def tail(self, t):
        if np.ndim(t):
            return np.array([self.tail(float(v)) for v in np.ravel(t)]).reshape(np.shape(t))
        return quad(self.scalar, float(t), math.inf, epsrel=1e-10, limit=400)[0]

    def to_dict(self):
        return {"kind": "rate"}


class SpikeConstruction:
    """Spiked modification k of a positive integrable C^1 base k_s.

    On [n, n + w_n) a bump of half-width w_n/2 lifts k_s(t) to
    Gamma_+(t) = Gamma(t) + sup k_s + 1 at the spike centre; elsewhere k = k_s.
    The width is

        w_n = 1/2  min  int_{n+1}^{n+2} k_s / ((n + 1) Gamma_+(n + 1))

    The extra 1/(n+1) factor is what makes the added mass negligible against
    the base tail; without it (``shrink=False``) the ratio of tail integrals
    tends to about 3/2 instead of 1.
    """

    def __init__(self, base, gamma: GammaSpec | None = None, horizon=1e4, shrink=True):
        self.base = base
        self.gamma = gamma or GammaSpec("t")
        self.horizon = float(horizon)
        self.shrink = shrink
        self.base_sup = self._sup_base()
        self._w = np.empty(0)

    def _sup_base(self):
        ks = lambda t: float(self.base.value(t))
        res = minimize_scalar(lambda t: -ks(t), bounds=(0.0, self.horizon), method="bounded")
        return max(ks(0.0), ks(self.horizon), -float(res.fun))

    def gamma_plus(self, t):
        return self.gamma.value(t) + self.base_sup + 1.0

    def gamma_plus_dt(self, t):
        return self.gamma.derivative(t)

    def widths(self, n_max):
        """w_0, ..., w_{n_max}."""
        if self._w.size <= n_max:
            n_new = max(n_max + 1, 2 * self._w.size, 128)
            j = np.arange(self._w.size, n_new, dtype=float)
            mass = self.base.integral(j + 1.0, j + 2.0)
            denom = self.gamma_plus(j + 1.0) * ((j + 1.0) if self.shrink else 1.0)
            self._w = np.concatenate([self._w, np.minimum(0.5, mass / denom)])
        return self._w[: n_max + 1]

    def _split(self, t):
        t = np.asarray(t, dtype=float)
        n = np.floor(t)
        w = self.widths(int(n.max()) if n.size else 0)[n.astype(int)]
        return t, n, w

    def scalar_value(self, t):
        """Fast float-only k(t)."""
        n = int(t)
        w = self._w[n] if n < self._w.size else self.widths(n)[n]
        ks = self.base.scalar(t)
        x = t - n
        if x >= w:
            return ks
        a = 0.5 * w
        y = 2.0 * a - x if x > a else x
        s = (y - a) / a
        return ks + (1.0 - 3.0 * s * s - 2.0 * s * s * s) * (float(self.gamma.value(t)) + self.base_sup + 1.0 - ks)

    def value(self, t):
        if np.ndim(t) == 0 and t >= 0:
            return self.scalar_value(float(t))
        scalar = np.ndim(t) == 0
        t, n, w = self._split(t)
        ks = self.base.value(t)
        x = t - n
        lift = np.where(x < w, bump(x, 0.5 * w) * (self.gamma_plus(t) - ks), 0.0)
        out = ks + lift
        return float(out) if scalar else out

    def derivative(self, t):
        scalar = np.ndim(t) == 0
        t, n, w = self._split(t)
        ks, dks = self.base.value(t), self.base.derivative(t)
        x = t - n
        a = 0.5 * w
        inside = x < w
        extra = (self.gamma_plus(t) - ks) * bump_dx(x, a) + bump(x, a) * (self.gamma_plus_dt(t) - dks)
        out = dks + np.where(inside, extra, 0.0)
        return float(out) if scalar else out

    def spike_piece(self, n, x):
        """Value and slope of the spike formula of interval n at local offset x = t - n."""
        w = self.widths(n)[n]
        a = 0.5 * w
        t = n + x
        ks, dks = float(self.base.value(t)), float(self.base.derivative(t))
        b, db = float(self.gamma_plus(t)) - ks, float(self.gamma_plus_dt(t)) - dks
        h, dh = float(bump(x, a)), float(bump_dx(x, a))
        return ks + b * h, dks + b * dh + h * db

    def seam_mismatch(self, n):
        """Relative value/slope jumps at the seams t = n and t = n + w_n.

        Each side is evaluated with the formula of the piece it belongs to,
        so the numbers are one-sided limits rather than difference quotients.
        """
        w = float(self.widths(n)[n])
        out = []
        for x in (0.0, w):
            seam = n + x
            base_v = float(self.base.value(seam))
            base_d = float(self.base.derivative(seam))
            sv, sd = self.spike_piece(n, x)
            dv = abs(sv - base_v) / max(abs(base_v), 1e-300)
            dd = abs(sd - base_d) / max(abs(base_d), 1e-300)
            out.append((seam, dv, dd))
        return out

    def centre(self, n):
        return n + 0.5 * self.widths(n)[n]

    def excess_mass(self, j, lo=None):
        """int of k - k_s over the spike on [j, j + w_j] (from ``lo`` if given).

        Quadrature runs in the local offset x = t - j so that spikes narrower
        than the spacing of doubles near j are still resolved.
        """
        j = np.atleast_1d(np.asarray(j, dtype=int))
        w = self.widths(int(j.max()))[j]
        a = 0.5 * w
        jf = j.astype(float)
        x0 = np.zeros_like(w) if lo is None else np.clip(np.asarray(lo, dtype=float) - jf, 0.0, w)

        def lift(x):
            tt = jf[:, None] + x
            return bump(x, a[:, None]) * (self.gamma_plus(tt) - self.base.value(tt))

        # the bump is a different cubic on each half, so integrate them separately
        left_hi = np.maximum(a, x0)
        right_lo = np.maximum(a, x0)
        left = np.where(a > x0, _gauss(lift, x0, left_hi), 0.0)
        right = _gauss(lift, right_lo, w)
        return left + right

    def mass(self, a, b):
        """int_a^b k for arrays of short intervals (base integral plus spike excess)."""
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        shape = a.shape
        a, b = a.ravel(), b.ravel()
        first = np.floor(a).astype(int)
        counts = np.floor(b).astype(int) - first + 1
        owner = np.repeat(np.arange(a.size), counts)
        js = first[owner] + np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        excess = self.excess_mass(js, a[owner]) - self.excess_mass(js, b[owner])
        out = np.asarray(self.base.integral(a, b), dtype=float) + np.bincount(owner, excess, minlength=a.size)
        return out.reshape(shape)

    def tail(self, t, n_spikes=4000):
        """int_t^inf k.

        The first ``n_spikes`` spike excesses are integrated exactly; the
        rest, which decay like a power of the index, are added from a
        power-law fit to the last few hundred of them.
        """
        n0 = int(math.floor(t))
        js = np.arange(n0, n0 + n_spikes)
        excess = self.excess_mass(js, np.full(js.shape, t, dtype=float))
        total = float(np.sum(excess))
        fit = slice(n_spikes // 2, n_spikes)
        pos = excess[fit] > 0
        if np.count_nonzero(pos) > 10:
            slope, icpt = np.polyfit(np.log(js[fit][pos] + 1.0), np.log(excess[fit][pos]), 1)
            q = -slope
            if q > 1.0:
                J = n0 + n_spikes + 0.5
                total += math.exp(icpt) * J ** (1.0 - q) / (q - 1.0)
        return float(self.base.tail(t)) + total

    def tail_ratio(self, t):
        return self.tail(t) / float(self.base.tail(t))

    def to_dict(self):
        return {
            "base": self.base.to_dict(),
            "gamma": self.gamma.to_dict(),
            "horizon": self.horizon,
            "shrink": self.shrink,
        }


@dataclass(frozen=True, eq=False)
class Spiked(Perturbation):
    """Positive forcing g = k from a :class:`SpikeConstruction`."""

    construction: SpikeConstruction
    kind = "spiked"

    @property
    def horizon(self):
        return self.construction.horizon

    def __call__(self, t):
        self._check(t)
        return self.construction.scalar_value(t)

    def values(self, ts):
        return self.construction.value(np.asarray(ts, dtype=float))

    def tail(self, t):
        return self.construction.tail(t)

    def envelope(self, t):
        # a spike of height Gamma_+ sits in every unit interval
        return float(self.construction.gamma_plus(math.floor(t) + 0.5))

    def _narrow(self, n, w):
        return w < IMPULSE_WIDTH * np.maximum(1.0, n)

    def max_step(self, t):
        n = int(t)
        w = self.construction.widths(n)[n]
        if t - n < w and not w < IMPULSE_WIDTH * max(1.0, n):
            return w / 8.0
        return 0.1

    def breakpoints(self, t0, t1):
        n_lo, n_hi = int(math.floor(t0)), int(math.floor(min(t1, self.horizon)))
        ns = np.arange(n_lo, n_hi + 1)
        w = self.construction.widths(n_hi + 1)[ns]
        wide = ~self._narrow(ns, w)
        pts = np.concatenate([ns, ns[wide] + 0.5 * w[wide], ns[wide] + w[wide]]).astype(float)
        return sorted(float(b) for b in pts if t0 < b <= t1)

    def impulses(self, t0, t1):
        """Spikes narrower than IMPULSE_WIDTH * n, as (n, excess mass).

        Over such a spike -f(x) changes x by at most |f(x)| w, far below
        any tolerance, so the spike acts as a jump by its excess mass.
        """
        n_lo, n_hi = int(math.ceil(t0)), int(math.floor(min(t1, self.horizon)))
        if n_hi < n_lo:
            return []
        ns = np.arange(n_lo, n_hi + 1)
        if n_lo == t0:
            ns = ns[1:]
        if ns.size == 0:
            return []
        w = self.construction.widths(n_hi)[ns]
        narrow = self._narrow(ns, w)
        ns = ns[narrow]
        if ns.size == 0:
            return []
        mass = self.construction.excess_mass(ns)
        return [(float(n), float(m)) for n, m in zip(ns, mass)]

    def partial(self, t):
        return self.construction.tail(0.0) - self.construction.tail(t)

    def to_dict(self):
        return {"kind": self.kind, **self.construction.to_dict()}


@dataclass(frozen=True, eq=False)
class Sampled(Perturbation):
    """Piecewise-linear forcing through tabulated points; zero past the table."""

    t_table: np.ndarray
    v_table: np.ndarray
    kind = "sampled"

    def __post_init__(self):
        t = np.asarray(self.t_table, dtype=float)
        if t.size < 2 or np.any(np.diff(t) <= 0) or t[0] > 0:
            raise DomainError("sampled table needs strictly increasing t starting at or before 0")

    @classmethod
    def from_csv(cls, path):
        return cls(*load_table(path))

    @property
    def horizon(self):
        return float(self.t_table[-1])

    def __call__(self, t):
        self._check(t)
        return float(np.interp(t, self.t_table, self.v_table))

    def values(self, ts):
        return np.interp(ts, self.t_table, self.v_table)

    def _cum(self):
        t, v = self.t_table, self.v_table
        return np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))])

    def partial(self, t):
        self._check(t)
        ts, cum = self.t_table, self._cum()
        i = max(int(np.searchsorted(ts, t, side="right")) - 1, 0)
        return float(cum[i] + 0.5 * (self.v_table[i] + self(t)) * (t - ts[i])) - float(
            np.interp(0.0, ts, cum)
        )

    def tail(self, t):
        return self.partial(self.horizon) - self.partial(t)

    def breakpoints(self, t0, t1):
        ts = self.t_table
        return [float(x) for x in ts[(ts > t0) & (ts <= t1)]]

    def max_step(self, t):
        return 0.1

    def to_dict(self):
        return {"kind": self.kind, "rows": int(np.size(self.t_table))}


def eval_g(p: Perturbation, t: float) -> float:
    return p(t)


def tail_integral_g(p: Perturbation, t: float) -> float:
    return p.tail(t)


def build_spiked(base, gamma: GammaSpec, horizon=1e4, shrink=True, square=False):
    """Spiked forcing (or, with ``square=True``, a noise with sigma^2 = k)."""
    c = SpikeConstruction(base, gamma, horizon=horizon, shrink=shrink)
    return SpikedSquare(c) if square else Spiked(c)


# ---------------------------------------------------------------------------
# Noise intensities
# ---------------------------------------------------------------------------


class NoiseIntensity:
    """Continuous diffusion coefficient sigma(t)."""

    kind = "abstract"

    def __call__(self, t):
        raise NotImplementedError

    def values(self, ts):
        return np.array([self(float(t)) for t in np.ravel(ts)])

    @property
    def square_integrable(self):
        return True

    def varsigma(self, t):
        """varsigma(t) = int_t^inf sigma^2."""
        raise NotImplementedError

    def interval(self, a, b):
        """int_a^b sigma^2 (vectorised)."""
        return np.asarray(self.varsigma_array(a)) - np.asarray(self.varsigma_array(b))

    def varsigma_array(self, ts):
        if np.ndim(ts):
            return np.array([self.varsigma(float(t)) for t in np.ravel(ts)]).reshape(np.shape(ts))
        return self.varsigma(float(ts))

    def support_end(self):
        """Time after which sigma vanishes identically (inf if never)."""
        return math.inf

    def varsigma_inv(self, tau):
        """Smallest t with varsigma(t) = tau, by bisection (varsigma decreasing)."""
        top = self.varsigma(0.0)
        if not (0 < tau <= top):
            raise DomainError(f"varsigma^-1 needs 0 < tau <= {top}, got {tau!r}")
        lo, hi = 0.0, 1.0
        while self.varsigma(hi) > tau:
            lo, hi = hi, 2.0 * hi
            if hi > 1e300:
                raise DomainError("varsigma^-1 out of range")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.varsigma(mid) > tau:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * hi:
                break
        return 0.5 * (lo + hi)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True, eq=False)
class ZeroNoise(NoiseIntensity):
    kind = "zero"

    def __call__(self, t):
        return 0.0

    def values(self, ts):
        return np.zeros(np.shape(ts))

    def varsigma(self, t):
        return 0.0

    def support_end(self):
        return 0.0


@dataclass(frozen=True, eq=False)
class PowerDecayNoise(NoiseIntensity):
    """sigma(t) = c (1 + t)^(-gamma)."""

    c: float = 1.0
    gamma: float = 2.5
    kind = "power_decay"

    def __call__(self, t):
        return self.c * (1.0 + t) ** (-self.gamma)

    def values(self, ts):
        return self.c * (1.0 + np.asarray(ts, dtype=float)) ** (-self.gamma)

    @property
    def square_integrable(self):
        return self.gamma > 0.5 or self.c == 0

    def varsigma(self, t):
        if not self.square_integrable:
            raise NotSquareIntegrableError(f"sigma=(1+t)^-{self.gamma} is not square integrable")
        g2 = 2.0 * self.gamma - 1.0
        return self.c ** 2 * (1.0 + t) ** (-g2) / g2

    def varsigma_array(self, ts):
        return self.varsigma(np.asarray(ts, dtype=float))

    def interval(self, a, b):
        # c^2/(2g-1) (1+a)^{1-2g} (1 - ((1+b)/(1+a))^{1-2g}) without cancellation
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        g2 = 2.0 * self.gamma - 1.0
        if g2 == 0:
            return self.c ** 2 * (np.log1p(b) - np.log1p(a))
        lead = self.c ** 2 * (1.0 + a) ** (-g2) / g2
        return lead * -np.expm1(-g2 * (np.log1p(b) - np.log1p(a)))

    def varsigma_inv(self, tau):
        top = self.varsigma(0.0)
        if not (0 < tau <= top):
            raise DomainError(f"varsigma^-1 needs 0 < tau <= {top}, got {tau!r}")
        g2 = 2.0 * self.gamma - 1.0
        return math.expm1(-math.log(tau * g2 / self.c ** 2) / g2)

    def to_dict(self):
        return {"kind": self.kind, "c": self.c, "gamma": self.gamma}


@dataclass(frozen=True, eq=False)
class CompactNoise(NoiseIntensity):
    """sigma(t) = c (1 - t/t_end)^2 on [0, t_end], zero afterwards (C^1)."""

    c: float = 1.0
    t_end: float = 10.0
    kind = "compact"

    def __call__(self, t):
        return self.c * (1.0 - t / self.t_end) ** 2 if t < self.t_end else 0.0

    def values(self, ts):
        ts = np.asarray(ts, dtype=float)
        return np.where(ts < self.t_end, self.c * (1.0 - ts / self.t_end) ** 2, 0.0)

    def varsigma(self, t):
        if t >= self.t_end:
            return 0.0
        return self.c ** 2 * self.t_end * (1.0 - t / self.t_end) ** 5 / 5.0

    def support_end(self):
        return self.t_end

    def to_dict(self):
        return {"kind": self.kind, "c": self.c, "t_end": self.t_end}


@dataclass(frozen=True, eq=False)
class SpikedSquare(NoiseIntensity):
    """sigma = sqrt(k) with k the spiked modification of an integrable base."""

    construction: SpikeConstruction
    kind = "spiked_square"

    def __call__(self, t):
        return math.sqrt(self.construction.value(t))

    def values(self, ts):
        return np.sqrt(self.construction.value(np.asarray(ts, dtype=float)))

    def varsigma(self, t):
        return self.construction.tail(t)

    def interval(self, a, b):
        return self.construction.mass(a, b)

    def to_dict(self):
        return {"kind": self.kind, **self.construction.to_dict()}


@dataclass(frozen=True, eq=False)
class SampledNoise(NoiseIntensity):
    """Piecewise-linear sigma^2 through tabulated points; zero past the table."""

    t_table: np.ndarray
    sigma2_table: np.ndarray
    kind = "sampled"

    def __post_init__(self):
        if np.any(np.asarray(self.sigma2_table) < 0):
            raise DomainError("sigma^2 table must be non-negative")

    @classmethod
    def from_csv(cls, path):
        return cls(*load_table(path))

    def __call__(self, t):
        return math.sqrt(float(np.interp(t, self.t_table, self.sigma2_table, right=0.0)))

    def values(self, ts):
        return np.sqrt(np.interp(ts, self.t_table, self.sigma2_table, right=0.0))

    def varsigma(self, t):
        ts, v = self.t_table, self.sigma2_table
        if t >= ts[-1]:
            return 0.0
        mask = ts > t
        pts_t = np.concatenate([[t], ts[mask]])
        pts_v = np.concatenate([[np.interp(t, ts, v)], v[mask]])
        return float(np.sum(0.5 * (pts_v[1:] + pts_v[:-1]) * np.diff(pts_t)))

    def support_end(self):
        nz = np.nonzero(np.asarray(self.sigma2_table) > 0)[0]
        if nz.size == 0:
            return 0.0
        k = nz[-1]
        return float(self.t_table[min(k + 1, len(self.t_table) - 1)])

    def to_dict(self):
        return {"kind": self.kind, "rows": int(np.size(self.t_table))}


def varsigma(noise: NoiseIntensity, t: float) -> float:
    return noise.varsigma(t)
