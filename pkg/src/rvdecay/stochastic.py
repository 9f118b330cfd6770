"""Euler-Maruyama simulation of dX = -f(X) dt + sigma(t) dB.

Gaussian draws come from a Philox4x64 counter-based stream keyed by
(master seed, path index): the normal used at step k is the k-th 64-bit
output of that stream mapped to (0, 1) and pushed through the inverse normal
CDF.  A path is therefore fully determined by its key, whatever thread or
block size produced it.

The inner loop is compiled with numba.  When the stability guard
``dt |f(x)/x| > 1/2`` fires, control returns to Python, which splits the
step into ``m`` substeps whose Brownian increments are a bridge conditioned
on the step's total increment (drawn from a second stream keyed by the path
index with its top bit set).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import ndtri

from .classify import LimitClassification, Tolerances, classify
from .decay_scale import DecayScale
from .deterministic import stability_substeps
from .errors import DomainError, SimulationError
from .nonlinearity import NonlinearityModel
from .perturbations import NoiseIntensity

__all__ = [
    "BLOWUP_GUARD",
    "SdePath",
    "EnsembleConfig",
    "PathSummary",
    "EnsembleSummary",
    "normal_stream",
    "simulate_path",
    "scaled_increment",
    "tail_martingale",
    "run_ensemble",
]

BLOWUP_GUARD = 1e6
BLOCK = 1 << 16
_BRIDGE_BIT = 1 << 63
_TWO_M53 = 2.0 ** -53


def _uniform(raw):
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def _key(seed, path):
    # a plain list would be routed through float64 once a word reaches 2^63
    return np.array([int(seed), int(path)], dtype=np.uint64)


def normal_stream(seed, path, start, count):
    """Standard normals number start .. start+count-1 of the (seed, path) stream."""
    gen = np.random.Philox(key=_key(seed, path), counter=[start // 4, 0, 0, 0])
    raw = gen.random_raw(count + start % 4)
    return ndtri(_uniform(raw[start % 4 :]))


def _bridge_normals(seed, path, step, m):
    gen = np.random.Philox(key=_key(seed, int(path) | _BRIDGE_BIT), counter=[0, int(step), 0, 0])
    return ndtri(_uniform(gen.random_raw(m)))


@numba.njit(cache=True, nogil=True)
def _f(x, code, a, beta, b1, b2, c, fc, sc):
    if x == 0.0:
        return 0.0
    u = abs(x)
    if u <= c:
        v = a * u ** beta
        if code == 1:
            l1 = -math.log(u)
            if b1 != 0.0:
                v *= l1 ** b1
            if b2 != 0.0:
                v *= math.log(l1) ** b2
    else:
        v = fc + sc * (u - c)
    return v if x > 0 else -v


@numba.njit(cache=True, nogil=True)
def _em_block(x, m, k0, n, dt, s, z, params, stride, rec_x, rec_m, guard):
    """Advance up to n steps from global step k0.

    Returns (x, m, j, status): j steps were taken; status 0 = block done,
    1 = stability guard fired before step j, 2 = |x| exceeded the guard.
    """
    code, a, beta, b1, b2, c, fc, sc = params
    for j in range(n):
        fx = _f(x, code, a, beta, b1, b2, c, fc, sc)
        if x != 0.0 and dt * abs(fx / x) > 0.5:
            return x, m, j, 1
        dw = s[j] * z[j]
        x = x - fx * dt + dw
        m = m + dw
        k = k0 + j + 1
        if k % stride == 0:
            rec_x[k // stride] = x
            rec_m[k // stride] = m
        if not abs(x) <= guard:
            return x, m, j + 1, 2
    return x, m, n, 0


@dataclass
class SdePath:
    """One Euler-Maruyama path recorded every ``record_dt``.

    ``M`` is the running stochastic integral sum_k sigma(t_k) dW_k.
    """

    times: np.ndarray
    X: np.ndarray
    M: np.ndarray
    dt: float
    record_dt: float
    seed: int
    path_index: int
    xi: float
    substeps: int = 0
    error: str | None = None
    t_fail: float | None = None

    @property
    def ok(self):
        return self.error is None


def simulate_path(
    model: NonlinearityModel,
    sigma: NoiseIntensity,
    xi: float,
    T: float,
    dt: float,
    seed: int,
    path_index: int = 0,
    record_dt: float = 1.0,
    negate_noise: bool = False,
    coarsen: int = 1,
    raise_on_error: bool = True,
) -> SdePath:
    """Simulate one path on [0, T].

    With ``coarsen = c > 1`` the path uses step c*dt and the Brownian
    increment over each step is the sum of the c increments of the dt-path
    with the same key, so runs at dt and c*dt are pathwise coupled.
    """
    if not (dt > 0 and T > 0):
        raise DomainError("dt and T must be positive")
    c = int(coarsen)
    if c < 1:
        raise DomainError("coarsen must be a positive integer")
    h = dt * c
    n_steps = int(round(T / h))
    stride = int(round(record_dt / h))
    if abs(n_steps * h - T) > 1e-9 * T or stride < 1 or abs(stride * h - record_dt) > 1e-9 * record_dt:
        raise DomainError("T and record_dt must be integer multiples of the step")
    if n_steps % stride:
        raise DomainError("record_dt must divide T")
    n_rec = n_steps // stride + 1
    rec_x = np.full(n_rec, np.nan)
    rec_m = np.full(n_rec, np.nan)
    rec_x[0] = xi
    rec_m[0] = 0.0
    params = model.kernel_params()
    params = (int(params[0]),) + tuple(float(p) for p in params[1:])
    sign = -1.0 if negate_noise else 1.0
    x, m = float(xi), 0.0
    n_sub = 0
    k = 0
    sq = math.sqrt(h)
    while k < n_steps:
        n = min(BLOCK, n_steps - k)
        z = normal_stream(seed, path_index, k * c, n * c)
        if c > 1:
            z = z.reshape(n, c).sum(axis=1) / math.sqrt(c)
        if negate_noise:
            z = -z
        s = sigma.values(np.arange(k, k + n) * h) * sq
        off = 0
        while off < n:
            x, m, j, status = _em_block(
                x, m, k + off, n - off, h, s[off:], z[off:], params, stride, rec_x, rec_m, BLOWUP_GUARD
            )
            off += j
            if status == 2:
                t_fail = (k + off) * h
                msg = f"|X| exceeded {BLOWUP_GUARD:g} at t={t_fail:.17g}"
                if raise_on_error:
                    raise SimulationError(msg, t_fail=t_fail)
                return _path(rec_x, rec_m, h, record_dt, seed, path_index, xi, n_sub, msg, t_fail)
            if status == 1:
                kk = k + off
                x, m = _substep(model, sigma, x, m, kk, h, z[off], seed, path_index, sign, c)
                n_sub += 1
                off += 1
                kk += 1
                if kk % stride == 0:
                    rec_x[kk // stride] = x
                    rec_m[kk // stride] = m
                if not abs(x) <= BLOWUP_GUARD:
                    t_fail = kk * h
                    msg = f"|X| exceeded {BLOWUP_GUARD:g} at t={t_fail:.17g}"
                    if raise_on_error:
                        raise SimulationError(msg, t_fail=t_fail)
                    return _path(rec_x, rec_m, h, record_dt, seed, path_index, xi, n_sub, msg, t_fail)
        k += n
    return _path(rec_x, rec_m, h, record_dt, seed, path_index, xi, n_sub, None, None)


def _path(rec_x, rec_m, h, record_dt, seed, path_index, xi, n_sub, err, t_fail):
    times = np.arange(rec_x.size) * record_dt
    return SdePath(times, rec_x, rec_m, h, record_dt, int(seed), int(path_index), float(xi), n_sub, err, t_fail)


def _substep(model, sigma, x, m_cum, k, h, z_k, seed, path_index, sign, c):
    """One guarded step split into Brownian-bridge substeps."""
    f = model
    n_sub = stability_substeps(h, x, f)
    sub = h / n_sub
    total = math.sqrt(h) * z_k  # already sign-adjusted
    e = _bridge_normals(seed, path_index, k * c, n_sub) * sign
    dws = math.sqrt(sub) * (e - e.mean()) + total / n_sub
    t0 = k * h
    for j in range(n_sub):
        dw = sigma(t0 + j * sub) * dws[j]
        x = x - f(x) * sub + dw
        m_cum = m_cum + dw
    return x, m_cum


def scaled_increment(path: SdePath, h: float, scale: DecayScale):
    """q(t) = ((X(t+h) - X(t))/h) / f(F^{-1}(t)) on recorded t with t + h <= T."""
    ratio = h / path.dt
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
        raise DomainError(f"h={h} is not a multiple of the step {path.dt}")
    lag = h / path.record_dt
    if abs(lag - round(lag)) > 1e-9 * max(1.0, lag) or round(lag) < 1:
        raise DomainError(f"h={h} is not a multiple of the record spacing {path.record_dt}")
    lag = int(round(lag))
    t = path.times[:-lag]
    q = (path.X[lag:] - path.X[:-lag]) / h / scale.fF_inv(t)
    return t, q


def tail_martingale(path: SdePath, scale: DecayScale, sigma: NoiseIntensity):
    """M_tail(t) = M(T) - M(t) and Sigma(t) = sqrt(2 vs(t) loglog(1/vs(t))).

    Sigma is NaN where vs(t) >= 1/e.  Returns (t, M_tail, Sigma, truncation)
    with ``truncation = vs(T)``, the variance of the neglected tail.
    """
    t = path.times
    m_tail = path.M[-1] - path.M
    vs = np.asarray(sigma.varsigma_array(t), dtype=float)
    Sig = np.full(t.size, np.nan)
    ok = (vs > 0) & (vs < math.exp(-1.0))
    Sig[ok] = np.sqrt(2.0 * vs[ok] * np.log(np.log(1.0 / vs[ok])))
    return t, m_tail, Sig, float(sigma.varsigma(float(t[-1])))


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleConfig:
    model: NonlinearityModel
    sigma: NoiseIntensity
    xi: float = 1.0
    T: float = 1e4
    dt: float = 1e-2
    n_paths: int = 100
    seed: int = 0
    h_list: tuple = (1.0,)
    record_dt: float = 1.0
    tolerances: Tolerances = field(default_factory=Tolerances)
    threads: int = 1
    coarsen: int = 1
    keep_paths: int = 0

    def __post_init__(self):
        if self.n_paths < 1:
            raise DomainError("n_paths must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError("seed must fit in 64 unsigned bits")


@dataclass
class PathSummary:
    path_index: int
    ratio: LimitClassification | None
    increments: dict  # h -> LimitClassification
    F_ratio: float  # F(|X(T)|)/T
    x_final: float
    substeps: int
    error: str | None = None
    t_fail: float | None = None

    @property
    def lam(self):
        return None if self.ratio is None else self.ratio.lam


@dataclass
class EnsembleSummary:
    config: EnsembleConfig
    paths: list
    fractions: dict
    kept: list = field(default_factory=list)  # SdePath objects of the first keep_paths paths

    @property
    def classified(self):
        return [p for p in self.paths if p.lam is not None]


def _summarise(path: SdePath, scale: DecayScale, cfg: EnsembleConfig) -> PathSummary:
    if not path.ok:
        return PathSummary(path.path_index, None, {}, math.nan, math.nan, path.substeps, path.error, path.t_fail)
    t = path.times
    pos = t >= 1.0
    r = path.X[pos] / scale.F_inv(t[pos])
    ratio = classify(t[pos], r, cfg.tolerances)
    incs = {}
    for h in cfg.h_list:
        tq, q = scaled_increment(path, h, scale)
        keep = tq >= 1.0
        incs[h] = classify(tq[keep], q[keep], cfg.tolerances)
    xT = float(path.X[-1])
    F_ratio = scale.F(abs(xT)) / t[-1] if xT != 0 else math.inf
    return PathSummary(path.path_index, ratio, incs, F_ratio, xT, path.substeps)


def _one(cfg: EnsembleConfig, scale: DecayScale, i: int):
    path = simulate_path(
        cfg.model,
        cfg.sigma,
        cfg.xi,
        cfg.T,
        cfg.dt,
        cfg.seed,
        i,
        record_dt=cfg.record_dt,
        coarsen=cfg.coarsen,
        raise_on_error=False,
    )
    return path, _summarise(path, scale, cfg)


def run_ensemble(cfg: EnsembleConfig, scale: DecayScale | None = None) -> EnsembleSummary:
    """Simulate and classify ``cfg.n_paths`` paths; results ordered by path index."""
    scale = scale or DecayScale(cfg.model)
    # prime lazy tables before threads share the scale
    scale.F_inv(cfg.T)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda i: _one(cfg, scale, i), range(cfg.n_paths)))
    else:
        results = [_one(cfg, scale, i) for i in range(cfg.n_paths)]
    summaries = [s for _, s in results]
    kept = [p for p, _ in results[: cfg.keep_paths]]
    counts = {"-1": 0, "0": 0, "+1": 0, "unclassified": 0}
    for s in summaries:
        lam = s.lam
        key = "unclassified" if lam is None else ("0" if lam == 0 else f"{lam:+d}")
        counts[key] += 1
    fractions = {k: v / cfg.n_paths for k, v in counts.items()}
    return EnsembleSummary(cfg, summaries, fractions, kept)
