"""Sharp conditions for rate preservation, evaluated for a given (f, g) or (f, sigma).

Deterministic conditions are judged numerically with a decade envelope rule:
the sup of |ratio| over each of the last three decades must be
non-increasing and the last one below 0.05.  Noise conditions use closed
forms when the pair is recognised (pure power f with power-decay sigma) and
finite-horizon numerics otherwise, with both recorded when both exist.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.special import erfc, exp1

from .decay_scale import DecayScale
from .errors import DomainError, NotSquareIntegrableError, TailUndefinedError
from .nonlinearity import Family
from .perturbations import NoiseIntensity, Perturbation, PowerDecayNoise, SpikedSquare

__all__ = [
    "ConditionResult",
    "MuEstimate",
    "SfRecord",
    "DeltaTest",
    "CriterionReport",
    "psi",
    "check_det_conditions",
    "sigma_in_L2",
    "compute_mu",
    "sum_Sf",
    "sf_h_experiment",
    "delta_integral_test",
    "noise_report",
    "envelope_verdict",
]

ENVELOPE_THRESHOLD = 0.05
ENVELOPE_DECADES = 3
MU_WINDOW = (1e8, 1e12)
MU_SLOPE_TOL = 0.02
SF_N = (100, 1000, 10000)
DELTA_T_HI = 1e12
DELTA_MIN_EXPONENT = 0.005


def psi(x):
    """Complementary standard normal distribution function."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    return str(v)


# ---------------------------------------------------------------------------
# Deterministic conditions
# ---------------------------------------------------------------------------


@dataclass
class ConditionResult:
    """Verdict ``holds`` / ``fails`` / ``inconclusive`` with the evidence."""

    verdict: str
    t: np.ndarray = field(default_factory=lambda: np.empty(0))
    series: np.ndarray = field(default_factory=lambda: np.empty(0))
    decade_sups: list = field(default_factory=list)
    limit_estimate: float = math.nan
    reason: str = ""


def envelope_verdict(t, series, threshold=ENVELOPE_THRESHOLD, decades=ENVELOPE_DECADES):
    """Decade-sup rule: returns (verdict, sups, last-decade mean)."""
    t = np.asarray(t, dtype=float)
    a = np.abs(np.asarray(series, dtype=float))
    if t.size == 0 or t[-1] < 10.0 ** decades * (1 - 1e-12):
        return "inconclusive", [], math.nan
    T = t[-1]
    sups = []
    for k in range(decades, 0, -1):
        lo, hi = T / 10.0 ** k, T / 10.0 ** (k - 1)
        m = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
        sups.append(float(np.max(a[m])))
    last = (t >= T / 10.0 * (1 - 1e-12))
    mean_last = float(np.mean(np.asarray(series, dtype=float)[last]))
    if not np.all(np.isfinite(sups)):
        return "inconclusive", sups, mean_last
    shrinking = all(sups[i + 1] <= sups[i] for i in range(len(sups) - 1))
    verdict = "holds" if (sups[-1] < threshold and shrinking) else "fails"
    return verdict, sups, mean_last


def _grid(T, per_decade=16):
    n = max(int(math.ceil(per_decade * math.log10(T))), 1)
    g = np.logspace(0.0, math.log10(T), n + 1)
    g[-1] = T
    return g


def check_det_conditions(scale: DecayScale, g: Perturbation, T: float | None = None, per_decade=16):
    """Tail condition and pointwise derivative condition for g.

    Series are evaluated on a log grid over [1, T] with T defaulting to
    min(horizon, 1e6).  Where g only has an envelope (oscillation, spikes)
    the envelope is what enters the verdict, since a sampled grid would
    miss the extremes.
    """
    T = T or min(g.horizon, 1e6)
    t = _grid(T, per_decade)
    Finv = scale.F_inv(t)
    fF = scale.model.evaluate(Finv)
    # tail condition
    try:
        tails = np.array([g.tail_bound(float(s)) for s in t])
        verdict, sups, lim = envelope_verdict(t, tails / Finv)
        tail_res = ConditionResult(verdict, t, tails / Finv, sups, lim, "decade envelope of |tail|/F^-1")
    except TailUndefinedError as exc:
        tail_res = ConditionResult("fails", reason=f"tail integral diverges: {exc}")
    env = np.array([g.envelope(float(s)) for s in t])
    verdict, sups, lim = envelope_verdict(t, env / fF)
    raw = np.array([g(float(s)) for s in t]) / fF
    point_res = ConditionResult(verdict, t, raw, sups, lim, "decade envelope of |g|/f(F^-1)")
    if verdict == "fails":
        point_res.limit_estimate = float(np.mean(raw[t >= T / 10.0]))
    return tail_res, point_res


# ---------------------------------------------------------------------------
# Noise conditions
# ---------------------------------------------------------------------------


def sigma_in_L2(sigma: NoiseIntensity) -> bool:
    return bool(sigma.square_integrable)


def _is_analytic_pair(scale, sigma):
    return scale.model.family is Family.PURE_POWER and math.isinf(scale.model.radius) and isinstance(
        sigma, PowerDecayNoise
    )


@dataclass
class MuEstimate:
    value: float  # 0, inf, or a finite positive estimate
    method: str  # analytic | numeric-limit | compact-support | skipped
    verdict: str  # zero | infinite | positive | inconclusive | skipped
    numeric_slope: float = math.nan
    numeric_verdict: str = ""
    agree: bool | None = None
    reason: str = ""


def _mu_numeric(scale, sigma, window=MU_WINDOW):
    t_lo, t_hi = window
    ts = np.logspace(math.log10(t_lo), math.log10(t_hi), 41)
    vs = np.asarray(sigma.varsigma_array(ts), dtype=float)
    if np.any(vs <= 0) or np.any(vs >= math.exp(-1.0)):
        return "inconclusive", math.nan, math.nan
    Finv = scale.F_inv(ts)
    R = 2.0 * vs * np.log(np.log(1.0 / vs)) / Finv ** 2
    slope = float(np.polyfit(np.log(ts), np.log(R), 1)[0])
    if slope < -MU_SLOPE_TOL:
        return "zero", slope, 0.0
    if slope > MU_SLOPE_TOL:
        return "infinite", slope, math.inf
    return "positive", slope, float(math.sqrt(R[-1]))


def _mu_window(sigma):
    cap = getattr(sigma, "construction", None)
    if isinstance(sigma, SpikedSquare):
        hi = cap.horizon
        return (hi / 1e3, hi)
    return MU_WINDOW


def compute_mu(scale: DecayScale, sigma: NoiseIntensity) -> MuEstimate:
    """mu = lim sqrt(2 vs loglog(1/vs)) / F^{-1}; analytic when recognised."""
    if not sigma.square_integrable:
        return MuEstimate(math.nan, "skipped", "skipped", reason="sigma not in L2")
    if math.isfinite(sigma.support_end()):
        return MuEstimate(0.0, "compact-support", "zero", reason="vs vanishes after finite time")
    num_verdict, slope, num_value = _mu_numeric(scale, sigma, _mu_window(sigma))
    if _is_analytic_pair(scale, sigma):
        b, gam = scale.model.beta, sigma.gamma
        thr = (b + 1.0) / (2.0 * (b - 1.0))
        verdict = "zero" if gam > thr else "infinite"
        value = 0.0 if gam > thr else math.inf
        agree = None if num_verdict == "inconclusive" else (num_verdict == verdict)
        return MuEstimate(value, "analytic", verdict, slope, num_verdict, agree, f"threshold gamma={thr:.6g}")
    return MuEstimate(num_value, "numeric-limit", num_verdict, slope, num_verdict, None, "log-slope of mu^2 over window")


@dataclass
class SfRecord:
    eps: float
    h: float
    partial_sums: dict  # N -> sum_{n < N}
    exponent: float  # analytic tail exponent of theta(n), NaN if unknown
    verdict: str  # finite | infinite | inconclusive
    method: str
    last_terms: tuple = ()


def _theta(scale, sigma, h, n):
    n = np.asarray(n, dtype=float)
    a, b = n * h, (n + 1.0) * h
    num = np.asarray(sigma.interval(a, b), dtype=float)
    den = scale.model.evaluate(scale.F_inv(a)) ** 2
    return np.sqrt(np.maximum(num, 0.0) / den)


def sum_Sf(scale: DecayScale, sigma: NoiseIntensity, eps: float, h: float, N_list=SF_N) -> SfRecord:
    """Partial sums of S_f(eps, h) = sum_n Psi(eps / theta(n))."""
    if not (eps > 0 and h > 0):
        raise DomainError("eps and h must be positive")
    if not sigma.square_integrable:
        raise NotSquareIntegrableError("S_f needs sigma in L2")
    N_max = max(N_list)
    n = np.arange(N_max)
    theta = _theta(scale, sigma, h, n)
    with np.errstate(divide="ignore"):
        terms = psi(np.where(theta > 0, eps / theta, np.inf))
    cums = np.cumsum(terms)
    partial = {int(N): float(cums[N - 1]) for N in N_list}
    last = tuple(float(v) for v in terms[-3:])
    if math.isfinite(sigma.support_end()):
        return SfRecord(eps, h, partial, -math.inf, "finite", "compact-support", last)
    if _is_analytic_pair(scale, sigma):
        b = scale.model.beta
        expo = -sigma.gamma + b / (b - 1.0)
        verdict = "finite" if expo < 0 else "infinite"
        return SfRecord(eps, h, partial, expo, verdict, "analytic", last)
    return SfRecord(eps, h, partial, math.nan, "inconclusive", "numeric", last)


def sf_h_experiment(scale, sigma, eps=1.0, hs=(0.1, 1.0, 10.0)):
    """S_f records over several step sizes h (reported, never asserted)."""
    return [sum_Sf(scale, sigma, eps, h) for h in hs]


@dataclass
class DeltaTest:
    verdict: str  # preserved | not-preserved | deterministic | skipped | inconclusive
    per_eps: dict  # eps -> (value or inf, "finite"/"infinite")
    exponent: float  # fitted log-slope of delta^2/t at the window end
    hypothesis_ok: bool | None
    window: tuple = (math.nan, math.nan)
    reason: str = ""


def _delta_sq_over_t(scale, sigma, t):
    """delta(t)^2 / t with delta(t) = t F^{-1}(vs^{-1}(1/t))."""
    s = sigma.varsigma_inv(1.0 / t)
    d = t * scale.F_inv(s)
    return d * d / t


def delta_integral_test(scale: DecayScale, sigma: NoiseIntensity, eps_grid=(0.1, 1.0, 10.0), t_hi=DELTA_T_HI):
    """int^inf (1/t) exp(-eps^2 delta(t)^2 / t) dt for each eps.

    Finite for every eps predicts preservation of the decay rate.  The
    window starts past 10 / vs(0) so that vs^{-1}(1/t) exists; beyond t_hi
    the integrand is extrapolated with the fitted exponent p of delta^2/t,
    which contributes E1(eps^2 D(t_hi)) / p.
    """
    if not sigma.square_integrable:
        return DeltaTest("skipped", {}, math.nan, None, reason="sigma not in L2")
    t_end = sigma.support_end()
    if math.isfinite(t_end):
        return DeltaTest("deterministic", {}, math.nan, None, reason=f"deterministic beyond T'={t_end:.6g}")
    vs0 = sigma.varsigma(0.0)
    t_lo = max(10.0 / vs0, 10.0)
    if not t_lo < t_hi / 1e3:
        return DeltaTest("inconclusive", {}, math.nan, None, (t_lo, t_hi), reason="window too short")
    ts = np.logspace(math.log10(t_lo), math.log10(t_hi), 97)
    D = np.array([_delta_sq_over_t(scale, sigma, float(t)) for t in ts])
    D = np.maximum(D, np.finfo(float).tiny)  # F^{-1} can underflow when delta^2/t -> 0
    increasing = bool(np.all(np.diff(D) > 0))
    end = ts >= t_hi / 10.0
    p = float(np.polyfit(np.log(ts[end]), np.log(D[end]), 1)[0])
    logD = np.log(D)
    s_nodes = np.log(ts)

    def D_at(s):
        return math.exp(np.interp(s, s_nodes, logD))

    per = {}
    for eps in eps_grid:
        with warnings.catch_warnings():
            # the integrand underflows to 0 for large eps, which quad reports as roundoff
            warnings.simplefilter("ignore", IntegrationWarning)
            head, _ = quad(lambda s: math.exp(-eps * eps * D_at(s)), s_nodes[0], s_nodes[-1], limit=400)
        if p > DELTA_MIN_EXPONENT:
            tail = float(exp1(eps * eps * D[-1])) / p
            per[float(eps)] = (head + tail, "finite")
        else:
            per[float(eps)] = (math.inf, "infinite")
    all_finite = all(v[1] == "finite" for v in per.values())
    if increasing:
        reason = "delta^2/t increasing on window"
    else:
        reason = "hypothesis violated: delta^2/t not increasing on window"
        if p <= 0:
            reason += "; delta^2/t -> 0 so the integral diverges for every eps"
    verdict = "preserved" if all_finite else "not-preserved"
    return DeltaTest(verdict, per, p, increasing, (t_lo, t_hi), reason)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class CriterionReport:
    det_tail_condition: ConditionResult | None = None
    det_pointwise_condition: ConditionResult | None = None
    sigma_L2: bool | None = None
    mu_estimate: MuEstimate | None = None
    Sf: list = field(default_factory=list)
    Sf_h_experiment: list = field(default_factory=list)
    delta_test: DeltaTest | None = None

    @property
    def Sf_verdict(self):
        if not self.Sf:
            return None
        vs = {r.verdict for r in self.Sf}
        return vs.pop() if len(vs) == 1 else "inconclusive"

    def to_keyvalue(self):
        """Structured ``key=value`` text, one fact per line, in a fixed order."""
        lines = []
        add = lambda k, v: lines.append(f"{k}={_fmt(v)}")
        for name, res in (("det_tail", self.det_tail_condition), ("det_pointwise", self.det_pointwise_condition)):
            if res is None:
                continue
            add(f"{name}.verdict", res.verdict)
            add(f"{name}.limit_estimate", res.limit_estimate)
            for i, s in enumerate(res.decade_sups):
                add(f"{name}.decade_sup.{i}", s)
            add(f"{name}.reason", res.reason)
        if self.sigma_L2 is not None:
            add("sigma_L2", str(self.sigma_L2).lower())
        mu = self.mu_estimate
        if mu is not None:
            add("mu.value", mu.value)
            add("mu.method", mu.method)
            add("mu.verdict", mu.verdict)
            add("mu.numeric_slope", mu.numeric_slope)
            add("mu.numeric_verdict", mu.numeric_verdict)
            add("mu.agree", "" if mu.agree is None else str(mu.agree).lower())
        for r in self.Sf:
            key = f"Sf[eps={_fmt(r.eps)},h={_fmt(r.h)}]"
            add(f"{key}.verdict", r.verdict)
            add(f"{key}.method", r.method)
            add(f"{key}.exponent", r.exponent)
            for N, v in r.partial_sums.items():
                add(f"{key}.partial.{N}", v)
        if self.Sf:
            add("Sf.verdict", self.Sf_verdict)
        elif self.sigma_L2 is False:
            add("Sf.verdict", "skipped")
        for r in self.Sf_h_experiment:
            key = f"Sf_h_experiment[h={_fmt(r.h)}]"
            add(f"{key}.partial.{max(r.partial_sums)}", r.partial_sums[max(r.partial_sums)])
            add(f"{key}.verdict", r.verdict)
        d = self.delta_test
        if d is not None:
            add("delta.verdict", d.verdict)
            add("delta.exponent", d.exponent)
            add("delta.hypothesis_ok", "" if d.hypothesis_ok is None else str(d.hypothesis_ok).lower())
            for eps, (val, v) in d.per_eps.items():
                add(f"delta[eps={_fmt(eps)}].integral", val)
                add(f"delta[eps={_fmt(eps)}].verdict", v)
            add("delta.reason", d.reason)
        return "\n".join(lines) + "\n"


def noise_report(scale, sigma, eps_grid=(0.1, 1.0, 10.0), h=1.0, h_experiment=(0.1, 1.0, 10.0)):
    """Every noise criterion; downstream checks are skipped when sigma is not in L2."""
    rep = CriterionReport(sigma_L2=sigma_in_L2(sigma))
    if not rep.sigma_L2:
        rep.mu_estimate = compute_mu(scale, sigma)
        rep.delta_test = DeltaTest("skipped", {}, math.nan, None, reason="sigma not in L2")
        return rep
    rep.mu_estimate = compute_mu(scale, sigma)
    rep.Sf = [sum_Sf(scale, sigma, e, h) for e in eps_grid]
    rep.Sf_h_experiment = sf_h_experiment(scale, sigma, 1.0, h_experiment)
    rep.delta_test = delta_integral_test(scale, sigma, eps_grid)
    return rep
