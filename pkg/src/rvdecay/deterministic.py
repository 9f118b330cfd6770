"""Deterministic integration of x' = -f(x) + g(t) and z' = -f(z + gamma(t)).

The integrator is a scalar Dormand-Prince 5(4) pair with local error control.
It lands exactly on a log-thinned checkpoint grid and on every breakpoint the
forcing declares (spike seams, table nodes), and it never steps further than
the forcing's own ``max_step``.

For the oscillating forcing the phase I(t)^n exceeds 1e15 quickly, after
which sin(I(t)^n) carries no information in double precision.  Past a switch
time the solution is therefore bracketed instead of followed: with
z = x + tail(t) the equation becomes z' = -f(z - tail(t)), and since
|tail(t)| <= e(t) := 2 k(I(t)^n) and f is increasing,

    z_lo' = -f(z_lo + e),   z_hi' = -f(z_hi - e)

give z_lo <= z <= z_hi and hence x in [z_lo - e, z_hi + e].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .decay_scale import DecayScale
from .errors import IntegrationError
from .nonlinearity import NonlinearityModel
from .perturbations import Oscillating, Perturbation, ZeroForcing

__all__ = [
    "StepPolicy",
    "Trajectory",
    "RateDiagnostics",
    "checkpoint_grid",
    "integrate_ode",
    "integrate_internal",
    "euler_deterministic",
    "diagnostics",
]

# Dormand-Prince 5(4): error weights b5 - b4 (the stages are unrolled in _dp45)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))

OSC_SWITCH_PHASE = 2000.0


@dataclass(frozen=True)
class StepPolicy:
    """Step-size control.

    ``h_max=None`` defers to the forcing's own ``max_step`` (0.1 for spiked,
    sampled and oscillating forcings, unlimited for smooth ones); a number
    caps every step.
    """

    rtol: float = 1e-10
    atol: float = 1e-14
    h_max: float | None = None
    h_init: float = 1e-3
    h_min_rel: float = 1e-13
    checkpoints_per_decade: int = 64
    max_steps: int = 50_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol >= 0 and self.h_init > 0):
            raise ValueError("step policy needs rtol > 0, atol >= 0, h_init > 0")
        if self.h_max is not None and not self.h_max > 0:
            raise ValueError("h_max must be positive")
        if self.checkpoints_per_decade < 1:
            raise ValueError("checkpoints_per_decade must be >= 1")

    def to_dict(self):
        return {
            "rtol": self.rtol,
            "atol": self.atol,
            "h_max": self.h_max,
            "h_init": self.h_init,
            "checkpoints_per_decade": self.checkpoints_per_decade,
        }


@dataclass
class Trajectory:
    times: np.ndarray
    values: np.ndarray
    xi: float
    policy: StepPolicy
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def bracketed(self):
        return self.lower is not None


def checkpoint_grid(T, per_decade=64):
    """0, a uniform grid on (0, 1], then log-spaced points up to T (inclusive)."""
    if not T > 0:
        return np.array([0.0])
    head = np.linspace(0.0, min(T, 1.0), per_decade + 1)
    if T <= 1.0:
        return head
    n = max(int(math.ceil(per_decade * math.log10(T))), 1)
    tail = np.logspace(0.0, math.log10(T), n + 1)[1:]
    tail[-1] = T
    return np.concatenate([head, tail])


def _dp45(rhs, y0, stops, policy, max_step, t_start=0.0, jumps=None):
    """Integrate a scalar ODE through the sorted ``stops``; returns values there.

    ``jumps`` maps a stop time to an increment added to y on arrival.
    """
    jumps = jumps or {}
    out = np.empty(len(stops))
    t, y = t_start, float(y0)
    h = policy.h_init
    k1 = rhs(t, y)
    n_acc = n_rej = crossings = 0
    rtol, atol = policy.rtol, policy.atol
    for i, t_stop in enumerate(stops):
        while t < t_stop:
            h_floor = policy.h_min_rel * max(1.0, t)
            if t_stop - t <= h_floor:
                t = t_stop  # rounding residue from landing on the previous stop
                break
            cap = max_step(t)
            h = min(h, cap, t_stop - t)
            if h <= h_floor:
                raise IntegrationError(f"step size underflow at t={t:.17g}", t_last=t)
            k2 = rhs(t + 0.2 * h, y + h * (0.2 * k1))
            k3 = rhs(t + 0.3 * h, y + h * (3 / 40 * k1 + 9 / 40 * k2))
            k4 = rhs(t + 0.8 * h, y + h * (44 / 45 * k1 - 56 / 15 * k2 + 32 / 9 * k3))
            k5 = rhs(
                t + 8 / 9 * h,
                y + h * (19372 / 6561 * k1 - 25360 / 2187 * k2 + 64448 / 6561 * k3 - 212 / 729 * k4),
            )
            k6 = rhs(
                t + h,
                y
                + h * (9017 / 3168 * k1 - 355 / 33 * k2 + 46732 / 5247 * k3 + 49 / 176 * k4 - 5103 / 18656 * k5),
            )
            y_new = y + h * (35 / 384 * k1 + 500 / 1113 * k3 + 125 / 192 * k4 - 2187 / 6784 * k5 + 11 / 84 * k6)
            k7 = rhs(t + h, y_new)
            err = abs(h * (_E[0] * k1 + _E[2] * k3 + _E[3] * k4 + _E[4] * k5 + _E[5] * k6 + _E[6] * k7))
            scale = atol + rtol * max(abs(y), abs(y_new))
            ratio = err / scale if scale > 0 else (0.0 if err == 0 else math.inf)
            if not math.isfinite(y_new):
                ratio = math.inf
            if ratio <= 1.0:
                if (y > 0 > y_new) or (y < 0 < y_new):
                    crossings += 1
                t_new = t + h
                t = t_stop if t_stop - t_new <= 4e-16 * max(1.0, t_stop) else t_new
                y = y_new
                k1 = k7
                n_acc += 1
                fac = 5.0 if ratio == 0 else min(5.0, 0.9 * ratio ** -0.2)
                h = h * fac
            else:
                n_rej += 1
                if not math.isfinite(ratio):
                    h *= 0.1
                else:
                    h *= max(0.2, 0.9 * ratio ** -0.2)
            if n_acc + n_rej > policy.max_steps:
                raise IntegrationError(f"step budget exhausted at t={t:.17g}", t_last=t)
        if t_stop in jumps:
            y += jumps[t_stop]
            k1 = rhs(t, y)
        out[i] = y
    return out, {"accepted": n_acc, "rejected": n_rej, "crossings": crossings}


def _stops(grid, forcing, t0, t1):
    bps = forcing.breakpoints(t0, t1) if forcing is not None else []
    jumps = dict(forcing.impulses(t0, t1)) if forcing is not None else {}
    extra = np.asarray(list(bps) + list(jumps), dtype=float)
    pts = np.union1d(grid[(grid > t0) & (grid <= t1)], extra)
    keep_grid = np.isin(pts, grid)
    return pts, keep_grid, jumps


def _step_cap(policy, forcing):
    if policy.h_max is not None:
        hm = policy.h_max
        if forcing is None:
            return lambda t: hm
        return lambda t: min(hm, forcing.max_step(t))
    if forcing is None:
        return lambda t: math.inf
    return forcing.max_step


def _run(rhs, xi, T, policy, forcing, grid=None, t_start=0.0):
    if grid is None:
        grid = checkpoint_grid(T, policy.checkpoints_per_decade)
    stops, on_grid, jumps = _stops(grid, forcing, t_start, T)
    vals, info = _dp45(rhs, xi, stops, policy, _step_cap(policy, forcing), t_start, jumps)
    info["impulses"] = len(jumps)
    return stops[on_grid], vals[on_grid], info


def _oscillation_switch(g: Oscillating):
    """Time at which the phase I(t)^n reaches OSC_SWITCH_PHASE."""
    target = OSC_SWITCH_PHASE ** (1.0 / g.n)
    lo, hi = 0.0, 1.0
    while float(g.gamma.integral(hi)) < target:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(g.gamma.integral(mid)) < target:
            lo = mid
        else:
            hi = mid
    return hi


def integrate_ode(
    model: NonlinearityModel,
    g: Perturbation | None,
    xi: float,
    T: float,
    policy: StepPolicy | None = None,
) -> Trajectory:
    """Solve x' = -f(x) + g(t), x(0) = xi on [0, T]."""
    policy = policy or StepPolicy()
    g = g if g is not None else ZeroForcing()
    if T > g.horizon:
        raise ValueError(f"T={T} exceeds the forcing horizon {g.horizon}")
    f = model

    def rhs(t, y):
        return -f(y) + g(t)

    grid = checkpoint_grid(T, policy.checkpoints_per_decade)
    if isinstance(g, Oscillating):
        t_sw = _oscillation_switch(g)
        if T > t_sw:
            return _bracketed_oscillating(model, g, xi, T, policy, grid, t_sw)
    times, vals, info = _run(rhs, xi, T, policy, g, grid)
    times = np.concatenate([[0.0], times])
    vals = np.concatenate([[float(xi)], vals])
    return Trajectory(times, vals, float(xi), policy, meta={"equation": "external", **info})


def _bracketed_oscillating(model, g, xi, T, policy, grid, t_sw):
    f = model

    def rhs(t, y):
        return -f(y) + g(t)

    head_grid = np.union1d(grid[grid < t_sw], [t_sw])
    t_head, x_head, info = _run(rhs, xi, t_sw, policy, g, head_grid)
    x_sw = x_head[-1]
    tail_sw, tail_err = g.tail_with_error(t_sw)
    n = g.n

    def e(t):
        I = float(g.gamma.integral(t))
        return 2.0 * I ** (-(n - 1)) / n

    e_sw = e(t_sw)
    z_lo0 = x_sw + tail_sw - tail_err
    z_hi0 = x_sw + tail_sw + tail_err
    # the bound |tail| <= e holds pointwise; the start values carry their own quadrature error
    lo_rhs = lambda t, z: -f(z + e(t))
    hi_rhs = lambda t, z: -f(z - e(t))
    tail_grid = grid[grid > t_sw]
    smooth = ZeroForcing()
    t_lo, z_lo, info_lo = _run(lo_rhs, z_lo0, T, policy, smooth, tail_grid, t_start=t_sw)
    _, z_hi, info_hi = _run(hi_rhs, z_hi0, T, policy, smooth, tail_grid, t_start=t_sw)
    e_tail = np.array([e(t) for t in t_lo])
    lower = z_lo - e_tail
    upper = z_hi + e_tail
    mid = 0.5 * (z_lo + z_hi)

    keep = t_head < t_sw
    times = np.concatenate([[0.0], t_head[keep], t_lo])
    vals = np.concatenate([[float(xi)], x_head[keep], mid])
    n_head = 1 + int(np.sum(keep))
    lo_all = np.concatenate([vals[:n_head], lower])
    hi_all = np.concatenate([vals[:n_head], upper])
    flags = [""] * n_head + ["bracketed"] * len(t_lo)
    meta = {
        "equation": "external",
        "switch_time": t_sw,
        "switch_bound": e_sw,
        "accepted": info["accepted"] + info_lo["accepted"] + info_hi["accepted"],
        "rejected": info["rejected"] + info_lo["rejected"] + info_hi["rejected"],
        "crossings": info["crossings"],
    }
    return Trajectory(times, vals, float(xi), policy, lower=lo_all, upper=hi_all, flags=flags, meta=meta)


def integrate_internal(
    model: NonlinearityModel,
    gamma,
    xi: float,
    T: float,
    policy: StepPolicy | None = None,
) -> Trajectory:
    """Solve z' = -f(z + gamma(t)), z(0) = xi on [0, T].

    ``gamma`` is any callable of t; if it is a :class:`Perturbation` its
    step cap and breakpoints are honoured.
    """
    policy = policy or StepPolicy()
    f = model
    forcing = gamma if isinstance(gamma, Perturbation) else None
    if gamma is None:
        gamma = lambda t: 0.0

    def rhs(t, z):
        return -f(z + gamma(t))

    times, vals, info = _run(rhs, xi, T, policy, forcing)
    times = np.concatenate([[0.0], times])
    vals = np.concatenate([[float(xi)], vals])
    return Trajectory(times, vals, float(xi), policy, meta={"equation": "internal", **info})


def stability_substeps(dt, x, f):
    """Smallest power of two m with (dt/m) |f(x)/x| <= 1/2."""
    if x == 0.0:
        return 1
    rate = abs(f(x) / x) * dt
    m = 1
    while rate > 0.5 * m:
        m *= 2
    return m


def euler_deterministic(model, xi, T, dt, record_dt=1.0):
    """Explicit Euler for x' = -f(x) with the SDE stepper's stability guard.

    Returns (times, values) on the record grid.  This is the zero-noise
    reference for the stochastic simulator.
    """
    f = model
    n_steps = int(round(T / dt))
    stride = int(round(record_dt / dt))
    out_t = [0.0]
    out_x = [float(xi)]
    x = float(xi)
    for k in range(n_steps):
        m = stability_substeps(dt, x, f)
        if m == 1:
            x = x - f(x) * dt
        else:
            sub = dt / m
            for _ in range(m):
                x = x - f(x) * sub
        if (k + 1) % stride == 0:
            out_t.append((k + 1) * dt)
            out_x.append(x)
    return np.array(out_t), np.array(out_x)


@dataclass
class RateDiagnostics:
    """r(t) = x/F^{-1}(t) and d(t) = (-f(x) + g(t))/f(F^{-1}(t)) on t >= 1."""

    t: np.ndarray
    r: np.ndarray
    d: np.ndarray
    r_lower: np.ndarray | None = None
    r_upper: np.ndarray | None = None
    windows: list = field(default_factory=list)  # (decade_lo, decade_hi, mean_r, std_r, mean_d, std_d)


def _decade_windows(t, r, d):
    out = []
    if t.size == 0:
        return out
    k0 = int(math.floor(math.log10(t[0]) + 1e-12))
    k1 = int(math.ceil(math.log10(t[-1]) - 1e-12))
    for k in range(k0, k1):
        m = (t >= 10.0 ** k) & (t <= 10.0 ** (k + 1))
        if np.count_nonzero(m) < 2:
            continue
        dm = d[m][np.isfinite(d[m])]
        out.append(
            (
                10.0 ** k,
                10.0 ** (k + 1),
                float(np.mean(r[m])),
                float(np.std(r[m])),
                float(np.mean(dm)) if dm.size else math.nan,
                float(np.std(dm)) if dm.size else math.nan,
            )
        )
    return out


def diagnostics(traj: Trajectory, scale: DecayScale, g: Perturbation | None = None) -> RateDiagnostics:
    g = g if g is not None else ZeroForcing()
    f = scale.model
    m = traj.times >= 1.0
    t = traj.times[m]
    x = traj.values[m]
    Finv = scale.F_inv(t)
    fFinv = f.evaluate(Finv)
    r = x / Finv
    flags = np.asarray(traj.flags, dtype=object)[m] if traj.flags else np.array([""] * t.size, dtype=object)
    d = np.empty(t.size)
    for i, (ti, xi) in enumerate(zip(t, x)):
        if flags[i] == "bracketed":
            d[i] = math.nan  # phase of g not resolvable in double precision
        else:
            d[i] = (-f(xi) + g(ti)) / fFinv[i]
    rl = ru = None
    if traj.bracketed:
        rl = traj.lower[m] / Finv
        ru = traj.upper[m] / Finv
    return RateDiagnostics(t, r, d, rl, ru, _decade_windows(t, r, d))
