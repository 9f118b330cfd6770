"""TOML experiment configuration.

One table per component::

    [model]      family, a, beta, beta1, beta2, crossover
    [forcing]    kind + parameters of g
    [internal]   kind of gamma for the internal-perturbation equation
    [noise]      kind + parameters of sigma
    [run]        kind (ode | ode-internal | sde), xi, T, seed, paths, dt, ...
    [step]       rtol, atol, h_max, h_init, checkpoints_per_decade
    [classifier] tol_mean, tol_std, tol_drift
    [sweep]      beta, gamma, band
    [construct]  target, T, dt

Unknown tables or keys are rejected so that typos surface as errors.
Every error names the offending field and, where it can be found, its line.
"""

from __future__ import annotations

import hashlib
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .classify import Tolerances
from .decay_scale import DecayScale
from .deterministic import StepPolicy
from .errors import ConfigError, DomainError
from .nonlinearity import Family, NonlinearityModel
from .perturbations import (
    CompactNoise,
    GammaSpec,
    Oscillating,
    PowerBase,
    PowerDecay,
    PowerDecayNoise,
    RateBase,
    Sampled,
    SampledNoise,
    ScaledDerivativeRate,
    SpikeConstruction,
    Spiked,
    SpikedSquare,
    ZeroForcing,
    ZeroLimitSynthetic,
    ZeroNoise,
    default_oscillation_power,
    load_table,
)

__all__ = ["ExperimentConfig", "load_config", "parse_config"]

_ALLOWED = {
    "model": {"family", "a", "beta", "beta1", "beta2", "crossover"},
    "forcing": {"kind", "c", "p", "xi", "gamma", "gamma_table", "n", "base", "base_c", "base_p", "horizon", "shrink", "file"},
    "internal": {"kind", "c"},
    "noise": {"kind", "c", "gamma", "t_end", "base", "base_c", "base_p", "gamma_fn", "horizon", "shrink", "file"},
    "run": {
        "kind", "xi", "T", "seed", "paths", "dt", "record_dt", "h", "eps", "export_paths", "coarsen",
    },
    "step": {"rtol", "atol", "h_max", "h_init", "checkpoints_per_decade"},
    "classifier": {"tol_mean", "tol_std", "tol_drift", "points_per_decade"},
    "sweep": {"beta", "gamma", "band", "eps", "h"},
    "construct": {"target", "T", "dt"},
}


@dataclass
class ExperimentConfig:
    source: str  # raw TOML text
    path: Path
    sha256: str
    model: NonlinearityModel
    run_kind: str
    xi: list
    T: float
    seed: int | None
    paths: int
    dt: float
    record_dt: float
    h_list: tuple
    eps: tuple
    export_paths: int
    coarsen: int
    step: StepPolicy
    tolerances: Tolerances
    forcing_spec: dict = field(default_factory=dict)
    internal_spec: dict = field(default_factory=dict)
    noise_spec: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    construct: dict = field(default_factory=dict)
    _scale: DecayScale | None = field(default=None, repr=False)

    @property
    def scale(self):
        if self._scale is None:
            self._scale = DecayScale(self.model)
        return self._scale

    def forcing(self):
        return build_forcing(self, self.forcing_spec)

    def noise(self):
        return build_noise(self, self.noise_spec)

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "run": {
                "kind": self.run_kind,
                "xi": self.xi,
                "T": self.T,
                "seed": self.seed,
                "paths": self.paths,
                "dt": self.dt,
                "record_dt": self.record_dt,
                "h": list(self.h_list),
                "eps": list(self.eps),
            },
        }


class _Reader:
    def __init__(self, text, data, base_dir):
        self.text = text
        self.data = data
        self.base_dir = base_dir

    def line_of(self, table, key=None):
        lines = self.text.splitlines()
        start = 0
        if table:
            pat = re.compile(r"^\s*\[\s*" + re.escape(table) + r"\s*\]")
            for i, ln in enumerate(lines):
                if pat.match(ln):
                    start = i
                    break
            else:
                return None
            if key is None:
                return start + 1
        kpat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
        for i in range(start + (1 if table else 0), len(lines)):
            if table and re.match(r"^\s*\[", lines[i]):
                break
            if kpat.match(lines[i]):
                return i + 1
        return start + 1 if table else None

    def error(self, table, key, msg):
        name = f"{table}.{key}" if key else table
        line = self.line_of(table, key)
        where = f"line {line}: " if line else ""
        return ConfigError(f"{where}{name}: {msg}", field=name)

    def table(self, name):
        t = self.data.get(name, {})
        if not isinstance(t, dict):
            raise self.error(name, None, "must be a table")
        for k in t:
            if k not in _ALLOWED[name]:
                raise self.error(name, k, "unknown key")
        return t

    def num(self, table, key, default=None, positive=False, integer=False, allow_none=False):
        t = self.data.get(table, {})
        if key not in t:
            if default is None and not allow_none:
                raise self.error(table, key, "is required")
            return default
        v = t[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(table, key, f"expected a number, got {v!r}")
        if integer and (not isinstance(v, int)):
            raise self.error(table, key, f"expected an integer, got {v!r}")
        if not math.isfinite(v):
            raise self.error(table, key, "must be finite")
        if positive and not v > 0:
            raise self.error(table, key, f"must be positive, got {v!r}")
        return v

    def choice(self, table, key, options, default=None):
        t = self.data.get(table, {})
        v = t.get(key, default)
        if v is None:
            raise self.error(table, key, "is required")
        if v not in options:
            raise self.error(table, key, f"must be one of {sorted(options)}, got {v!r}")
        return v

    def num_list(self, table, key, default):
        t = self.data.get(table, {})
        v = t.get(key, default)
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            v = [v]
        if not isinstance(v, (list, tuple)) or not v or any(
            isinstance(x, bool) or not isinstance(x, (int, float)) for x in v
        ):
            raise self.error(table, key, "expected a number or a non-empty list of numbers")
        return [float(x) for x in v]

    def file(self, table, key):
        t = self.data.get(table, {})
        if key not in t or not isinstance(t[key], str):
            raise self.error(table, key, "expected a file path")
        p = Path(t[key])
        if not p.is_absolute():
            p = self.base_dir / p
        if not p.exists():
            raise self.error(table, key, f"file not found: {p}")
        return p


def parse_config(text: str, path: Path | str = "config.toml") -> ExperimentConfig:
    path = Path(path)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax: {exc}", field="") from None
    rd = _Reader(text, data, path.parent)
    for name in data:
        if name not in _ALLOWED:
            raise rd.error(name, None, "unknown table")
    for name in _ALLOWED:
        rd.table(name)

    fam = rd.choice("model", "family", {f.value for f in Family}, "pure_power")
    try:
        model = NonlinearityModel(
            Family(fam),
            a=rd.num("model", "a", 1.0, positive=True),
            beta=rd.num("model", "beta", 3.0),
            beta1=rd.num("model", "beta1", 0.0),
            beta2=rd.num("model", "beta2", 0.0),
            crossover=rd.num("model", "crossover", allow_none=True),
        )
    except DomainError as exc:
        raise rd.error("model", None, str(exc)) from None

    run_kind = rd.choice("run", "kind", {"ode", "ode-internal", "sde"}, "ode")
    xi = rd.num_list("run", "xi", [1.0])
    T = float(rd.num("run", "T", 1e4, positive=True))
    seed = rd.num("run", "seed", allow_none=True, integer=True)
    if seed is not None and not 0 <= seed < 2 ** 64:
        raise rd.error("run", "seed", "must be an unsigned 64-bit integer")
    paths = rd.num("run", "paths", 100, positive=True, integer=True)
    dt = float(rd.num("run", "dt", 1e-2, positive=True))
    record_dt = float(rd.num("run", "record_dt", 1.0, positive=True))
    h_list = tuple(rd.num_list("run", "h", [1.0]))
    if any(h <= 0 for h in h_list):
        raise rd.error("run", "h", "increments must be positive")
    eps = tuple(rd.num_list("run", "eps", [0.1, 1.0, 10.0]))
    if any(e <= 0 for e in eps):
        raise rd.error("run", "eps", "must be positive")
    export_paths = rd.num("run", "export_paths", 10, integer=True)
    coarsen = rd.num("run", "coarsen", 1, positive=True, integer=True)
    if run_kind == "sde":
        if "noise" not in data:
            raise rd.error("noise", None, "an sde run needs a [noise] table")
        for v, name in ((T, "T"), (record_dt, "record_dt")):
            ratio = v / (dt * coarsen)
            if abs(ratio - round(ratio)) > 1e-9 * ratio:
                raise rd.error("run", name, "must be an integer multiple of dt")
        for h in h_list:
            ratio = h / record_dt
            if abs(ratio - round(ratio)) > 1e-9 * max(ratio, 1.0) or round(ratio) < 1:
                raise rd.error("run", "h", f"h={h} must be a multiple of record_dt")

    try:
        step = StepPolicy(
            rtol=rd.num("step", "rtol", 1e-10, positive=True),
            atol=rd.num("step", "atol", 1e-14),
            h_max=rd.num("step", "h_max", allow_none=True, positive=True),
            h_init=rd.num("step", "h_init", 1e-3, positive=True),
            checkpoints_per_decade=rd.num("step", "checkpoints_per_decade", 64, positive=True, integer=True),
        )
    except ValueError as exc:
        raise rd.error("step", None, str(exc)) from None
    tol = Tolerances(
        tol_mean=rd.num("classifier", "tol_mean", 0.1, positive=True),
        tol_std=rd.num("classifier", "tol_std", 0.05, positive=True),
        tol_drift=rd.num("classifier", "tol_drift", 0.05, positive=True),
        points_per_decade=rd.num("classifier", "points_per_decade", 64, positive=True, integer=True),
    )

    cfg = ExperimentConfig(
        source=text,
        path=path,
        sha256=hashlib.sha256(text.encode("utf-8")).hexdigest(),
        model=model,
        run_kind=run_kind,
        xi=xi,
        T=T,
        seed=seed,
        paths=paths,
        dt=dt,
        record_dt=record_dt,
        h_list=h_list,
        eps=eps,
        export_paths=export_paths,
        coarsen=coarsen,
        step=step,
        tolerances=tol,
        forcing_spec=dict(data.get("forcing", {})),
        internal_spec=dict(data.get("internal", {})),
        noise_spec=dict(data.get("noise", {})),
        sweep=dict(data.get("sweep", {})),
        construct=dict(data.get("construct", {})),
    )
    cfg._reader = rd
    # build eagerly so every malformed table is a config error, not a runtime one
    if "forcing" in data:
        cfg.forcing()
    if "noise" in data:
        cfg.noise()
    if "internal" in data:
        rd.choice("internal", "kind", {"zero", "forcing_tail", "decay_fraction"})
    if "sweep" in data:
        rd.num_list("sweep", "beta", [1.5, 2.0, 3.0, 5.0])
        rd.num_list("sweep", "gamma", [0.6])
        rd.num("sweep", "band", 0.05, positive=True)
    if "construct" in data:
        rd.choice("construct", "target", {"forcing", "noise"}, "forcing")
        rd.num("construct", "T", 100.0, positive=True)
        rd.num("construct", "dt", 0.01, positive=True)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", field="") from None
    return parse_config(text, path)


def _gamma_spec(rd, table, key, default):
    t = rd.data.get(table, {})
    if "gamma_table" in t and table == "forcing":
        ts, vs = load_table(rd.file(table, "gamma_table"))
        try:
            return GammaSpec.from_table(ts, vs)
        except DomainError as exc:
            raise rd.error(table, "gamma_table", str(exc)) from None
    return GammaSpec(rd.choice(table, key, {"t", "1+t", "t^2", "exp"}, default))


def _spike_construction(cfg, rd, table, gamma_key):
    base_kind = rd.choice(table, "base", {"power", "rate"}, "power")
    try:
        if base_kind == "power":
            base = PowerBase(rd.num(table, "base_c", 1.0, positive=True), rd.num(table, "base_p", 2.0))
        else:
            base = RateBase(cfg.scale)
    except DomainError as exc:
        raise rd.error(table, "base_p", str(exc)) from None
    gamma = _gamma_spec(rd, table, gamma_key, "t")
    shrink = rd.data.get(table, {}).get("shrink", True)
    if not isinstance(shrink, bool):
        raise rd.error(table, "shrink", "expected true or false")
    return SpikeConstruction(base, gamma, horizon=rd.num(table, "horizon", 1e4, positive=True), shrink=shrink)


def build_forcing(cfg: ExperimentConfig, spec: dict):
    rd = cfg._reader
    if not spec:
        return ZeroForcing()
    kind = rd.choice(
        "forcing",
        "kind",
        {"zero", "power_decay", "scaled_derivative_rate", "zero_limit_synthetic", "oscillating", "spiked", "sampled"},
    )
    try:
        if kind == "zero":
            return ZeroForcing()
        if kind == "power_decay":
            return PowerDecay(rd.num("forcing", "c", 1.0), rd.num("forcing", "p", 2.0))
        if kind == "scaled_derivative_rate":
            return ScaledDerivativeRate(cfg.scale, rd.num("forcing", "c", 1.0))
        if kind == "zero_limit_synthetic":
            return ZeroLimitSynthetic(cfg.model, rd.num("forcing", "xi", 1.0))
        if kind == "oscillating":
            n = rd.num("forcing", "n", default_oscillation_power(cfg.model.beta), integer=True)
            return Oscillating(_gamma_spec(rd, "forcing", "gamma", "1+t"), n)
        if kind == "spiked":
            return Spiked(_spike_construction(cfg, rd, "forcing", "gamma"))
        return Sampled.from_csv(rd.file("forcing", "file"))
    except DomainError as exc:
        raise rd.error("forcing", None, str(exc)) from None


def build_noise(cfg: ExperimentConfig, spec: dict):
    rd = cfg._reader
    if not spec:
        return ZeroNoise()
    kind = rd.choice("noise", "kind", {"zero", "power_decay", "compact", "spiked_square", "sampled"})
    try:
        if kind == "zero":
            return ZeroNoise()
        if kind == "power_decay":
            return PowerDecayNoise(rd.num("noise", "c", 1.0), rd.num("noise", "gamma", 2.5))
        if kind == "compact":
            return CompactNoise(rd.num("noise", "c", 1.0), rd.num("noise", "t_end", 10.0, positive=True))
        if kind == "spiked_square":
            return SpikedSquare(_spike_construction(cfg, rd, "noise", "gamma_fn"))
        return SampledNoise.from_csv(rd.file("noise", "file"))
    except DomainError as exc:
        raise rd.error("noise", None, str(exc)) from None
