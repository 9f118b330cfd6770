"""Mean-reversion nonlinearities regularly varying at zero.

Two odd families are provided::

    PURE_POWER        f(x) = a |x|^beta sgn(x)
    POWER_LOG_LOGLOG  f(x) = a |x|^beta log(1/|x|)^beta1 (log log(1/|x|))^beta2 sgn(x)

Logarithms are natural.  The log family is only meaningful for
``|x| < exp(-e)`` (so that ``log log(1/|x|) > 1``); beyond a crossover radius
``c`` the function continues as a straight line matching value and slope at
``c``.  The extension keeps ``f`` locally Lipschitz, increasing and bounded
away from zero at infinity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = ["Family", "NonlinearityModel", "eval_f", "slowly_varying_ell"]

# log(1/x) > 1 needs x < 1/e; log log(1/x) > 1 additionally needs x < exp(-e)
LOG_FAMILY_MAX_CROSSOVER = math.exp(-math.e)
LOG_ONLY_MAX_CROSSOVER = math.exp(-1.0)
DEFAULT_LOG_CROSSOVER = 0.05


class Family(enum.Enum):
    PURE_POWER = "pure_power"
    POWER_LOG_LOGLOG = "power_log_loglog"


@dataclass(frozen=True)
class NonlinearityModel:
    """Parametric odd nonlinearity ``f`` in RV_0(beta), beta > 1.

    ``crossover=None`` means no linear extension for the pure power (the
    power law already satisfies every global requirement) and
    ``DEFAULT_LOG_CROSSOVER`` for the log family.
    """

    family: Family = Family.PURE_POWER
    a: float = 1.0
    beta: float = 3.0
    beta1: float = 0.0
    beta2: float = 0.0
    crossover: float | None = None
    _c: float = field(init=False, repr=False, compare=False)
    _fc: float = field(init=False, repr=False, compare=False)
    _sc: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        if not (self.a > 0 and math.isfinite(self.a)):
            raise DomainError(f"a must be positive and finite, got {self.a}")
        if not (self.beta > 1 and math.isfinite(self.beta)):
            raise DomainError(f"beta must exceed 1, got {self.beta}")
        if fam is Family.PURE_POWER:
            if self.beta1 != 0 or self.beta2 != 0:
                raise DomainError("pure power family takes beta1 = beta2 = 0")
            c = math.inf if self.crossover is None else float(self.crossover)
        else:
            c = DEFAULT_LOG_CROSSOVER if self.crossover is None else float(self.crossover)
            cmax = LOG_FAMILY_MAX_CROSSOVER if self.beta2 else LOG_ONLY_MAX_CROSSOVER
            if not 0 < c < cmax:
                raise DomainError(f"log family crossover must lie in (0, {cmax:.6g})")
        if not c > 0:
            raise DomainError("crossover must be positive")
        object.__setattr__(self, "_c", c)
        if math.isfinite(c):
            fc = self._core(c)
            sc = self._core_derivative(c)
            if not (fc > 0 and sc > 0):
                raise DomainError(
                    "f is not increasing at the crossover; pick a smaller crossover"
                )
        else:
            fc, sc = math.inf, math.inf
        object.__setattr__(self, "_fc", fc)
        object.__setattr__(self, "_sc", sc)

    # -- asymptotic form, valid for 0 < u <= crossover --------------------
    def _slow(self, u):
        """Slowly varying factor f(u)/(a u^beta) of the log family."""
        if self.family is Family.PURE_POWER:
            return 1.0
        l1 = -math.log(u)
        out = 1.0
        if self.beta1:
            out *= l1 ** self.beta1
        if self.beta2:
            out *= math.log(l1) ** self.beta2
        return out

    def _core(self, u):
        return self.a * u ** self.beta * self._slow(u)

    def _core_derivative(self, u):
        # d/du log f = (beta - beta1/L1 - beta2/(L1 L2)) / u
        log_slope = self.beta
        if self.family is Family.POWER_LOG_LOGLOG:
            l1 = -math.log(u)
            log_slope -= self.beta1 / l1
            if self.beta2:
                log_slope -= self.beta2 / (l1 * math.log(l1))
        return self._core(u) * log_slope / u

    @property
    def radius(self):
        """The crossover radius actually in force (``inf`` if none)."""
        return self._c

    def __call__(self, x):
        """Scalar evaluation of f(x)."""
        if not math.isfinite(x):
            raise DomainError(f"f is evaluated at non-finite x={x!r}")
        if x == 0.0:
            return 0.0
        u = abs(x)
        if u <= self._c:
            v = self._core(u)
        else:
            v = self._fc + self._sc * (u - self._c)
        return v if x > 0 else -v

    def derivative(self, x):
        """f'(x); even in x."""
        u = abs(x)
        if u == 0.0:
            return 0.0
        if u <= self._c:
            return self._core_derivative(u)
        return self._sc

    def evaluate(self, x):
        """Vectorised f over an array."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError("f is evaluated at non-finite values")
        u = np.abs(x)
        out = np.zeros_like(u)
        inner = (u > 0) & (u <= self._c)
        ui = u[inner]
        core = self.a * ui ** self.beta
        if self.family is Family.POWER_LOG_LOGLOG:
            l1 = -np.log(ui)
            if self.beta1:
                core = core * l1 ** self.beta1
            if self.beta2:
                core = core * np.log(l1) ** self.beta2
        out[inner] = core
        outer = u > self._c
        out[outer] = self._fc + self._sc * (u[outer] - self._c)
        return np.copysign(out, x)

    def kernel_params(self):
        """Flat parameter tuple consumed by the compiled SDE kernel."""
        code = 0 if self.family is Family.PURE_POWER else 1
        return (code, self.a, self.beta, self.beta1, self.beta2, self._c, self._fc, self._sc)

    def to_dict(self):
        return {
            "family": self.family.value,
            "a": self.a,
            "beta": self.beta,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "crossover": None if math.isinf(self._c) else self._c,
        }


def eval_f(model: NonlinearityModel, x: float) -> float:
    return model(x)


def slowly_varying_ell(model: NonlinearityModel, x: float) -> float:
    """ell(x) = (f(x)/x^beta)^(-1/(beta-1)) on 0 < x < crossover."""
    if not (0 < x < model.radius):
        raise DomainError(f"ell is defined on (0, {model.radius}), got x={x!r}")
    return (model.a * model._slow(x)) ** (-1.0 / (model.beta - 1.0))
