"""Command line entry point ``rvdecay``.

Exit status: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classify import classify
from .config import ExperimentConfig, load_config
from .criteria import CriterionReport, check_det_conditions, noise_report
from .decay_scale import DecayScale
from .deterministic import diagnostics, integrate_internal, integrate_ode
from .errors import ConfigError
from .nonlinearity import NonlinearityModel
from .output import fmt, write_csv, write_dat, write_manifest, write_text
from .perturbations import IMPULSE_WIDTH, PowerDecayNoise
from .stochastic import EnsembleConfig, run_ensemble, scaled_increment, tail_martingale

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
RNG_SCHEME = "philox4x64; key=(master_seed, path_index); normal k = ndtri(u(output k))"


class _Outputs:
    """Collects artifacts in memory-order; files are written by this single writer."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.names: list[str] = []
        self.errors: list[dict] = []
        self.extra: dict = {}

    def csv(self, name, header, cols):
        write_csv(self.dir / name, header, cols)
        self.names.append(name)

    def dat(self, name, header, cols):
        write_dat(self.dir / name, header, cols)
        self.names.append(name)

    def text(self, name, text):
        write_text(self.dir / name, text)
        self.names.append(name)


def _kv(prefix, d):
    return "".join(f"{prefix}{k}={fmt(v)}\n" for k, v in d.items())


# -- ode ---------------------------------------------------------------------


def _internal_gamma(cfg: ExperimentConfig):
    spec = cfg.internal_spec
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return (lambda t: 0.0), 0.0, kind
    if kind == "forcing_tail":
        g = cfg.forcing()
        # z = x + int_t^inf g solves z' = -f(z - int_t^inf g)
        return (lambda t: -g.tail(t)), g.tail(0.0), kind
    c = float(spec.get("c", 1.0))
    scale = cfg.scale
    return (lambda t: c * scale.F_inv(t) / math.log(math.e + t)), 0.0, kind


def cmd_ode(cfg: ExperimentConfig, out: _Outputs, internal=False):
    scale = cfg.scale
    g = cfg.forcing()
    summary = []
    for i, xi in enumerate(cfg.xi):
        if internal:
            gam, shift, kind = _internal_gamma(cfg)
            traj = integrate_internal(cfg.model, gam, xi + shift, cfg.T, cfg.step)
            t = traj.times
            z = traj.values
            Finv = scale.F_inv(t)
            fF = cfg.model.evaluate(Finv)
            keep = t >= 1.0
            r = z / Finv
            d = np.array([-cfg.model(zz + gam(tt)) for tt, zz in zip(t, z)]) / fF
            flags = [""] * t.size
            out.csv(f"trajectory_{i}.csv", ["t", "z", "r", "d", "flag"], [t, z, r, d, flags])
            out.dat(f"ratio_{i}.dat", ["t", "r", "d"], [t[keep], r[keep], d[keep]])
            cls_r = classify(t[keep], r[keep], cfg.tolerances)
            cls_d = classify(t[keep], d[keep], cfg.tolerances)
            summary.append(f"xi[{i}].internal_kind={kind}\n")
        else:
            traj = integrate_ode(cfg.model, g, xi, cfg.T, cfg.step)
            t = traj.times
            Finv = scale.F_inv(t)
            fF = cfg.model.evaluate(Finv)
            flags = traj.flags or [""] * t.size
            r = traj.values / Finv
            d = np.full(t.size, np.nan)
            for j, (tt, xx) in enumerate(zip(t, traj.values)):
                if flags[j] != "bracketed":
                    d[j] = (-cfg.model(xx) + g(tt)) / fF[j]
            header = ["t", "x", "r", "d", "flag"]
            cols = [t, traj.values, r, d, flags]
            if traj.bracketed:
                header += ["x_lower", "x_upper"]
                cols += [traj.lower, traj.upper]
            out.csv(f"trajectory_{i}.csv", header, cols)
            diag = diagnostics(traj, scale, g)
            out.dat(f"ratio_{i}.dat", ["t", "r", "d"], [diag.t, diag.r, diag.d])
            cls_r = classify(diag.t, diag.r, cfg.tolerances)
            cls_d = classify(diag.t, diag.d, cfg.tolerances)
            if traj.bracketed:
                lo = classify(diag.t, diag.r_lower, cfg.tolerances)
                hi = classify(diag.t, diag.r_upper, cfg.tolerances)
                summary.append(f"xi[{i}].ratio_lower.class={lo.label}\nxi[{i}].ratio_upper.class={hi.label}\n")
        summary.append(f"xi[{i}].value={fmt(float(xi))}\n")
        summary.append(_kv(f"xi[{i}].ratio.", cls_r.to_dict()) + f"xi[{i}].ratio.class={cls_r.label}\n")
        summary.append(_kv(f"xi[{i}].derivative.", cls_d.to_dict()) + f"xi[{i}].derivative.class={cls_d.label}\n")
        for k, v in traj.meta.items():
            summary.append(f"xi[{i}].integrator.{k}={fmt(v)}\n")
    out.text("summary.txt", "".join(summary))
    if not internal and cfg.forcing_spec:
        _write_det_criteria(cfg, g, out)


def _write_det_criteria(cfg, g, out):
    T = min(cfg.T, g.horizon) if cfg.T >= 1e3 else min(g.horizon, 1e6)
    tail, point = check_det_conditions(cfg.scale, g, T)
    rep = CriterionReport(det_tail_condition=tail, det_pointwise_condition=point)
    out.text("criteria.txt", rep.to_keyvalue())
    n = point.t.size
    tail_series = tail.series if tail.series.size == n else np.full(n, np.nan)
    out.csv("criteria_series.csv", ["t", "tail_ratio", "pointwise_ratio"], [point.t, tail_series, point.series])


# -- sde ---------------------------------------------------------------------


def cmd_sde(cfg: ExperimentConfig, out: _Outputs, threads: int):
    if cfg.seed is None:
        raise ConfigError("run.seed: required for sde runs (or pass --seed)", field="run.seed")
    sigma = cfg.noise()
    scale = cfg.scale
    lines = []
    for i, xi in enumerate(cfg.xi):
        ecfg = EnsembleConfig(
            cfg.model,
            sigma,
            xi=xi,
            T=cfg.T,
            dt=cfg.dt,
            n_paths=cfg.paths,
            seed=cfg.seed,
            h_list=cfg.h_list,
            record_dt=cfg.record_dt,
            tolerances=cfg.tolerances,
            threads=threads,
            coarsen=cfg.coarsen,
            keep_paths=min(cfg.export_paths, cfg.paths),
        )
        summ = run_ensemble(ecfg, scale)
        tag = f"xi{i}_" if len(cfg.xi) > 1 else ""
        h0 = cfg.h_list[0]
        rows = {k: [] for k in ("path", "class", "r_mean", "r_std", "r_drift", "F_ratio", "x_final", "substeps", "error", "t_fail")}
        for h in cfg.h_list:
            rows[f"q_class_h{fmt(h)}"] = []
            rows[f"q_mean_h{fmt(h)}"] = []
            rows[f"q_std_h{fmt(h)}"] = []
        for p in summ.paths:
            rows["path"].append(p.path_index)
            rows["class"].append(p.ratio.label if p.ratio else "failed")
            rows["r_mean"].append(p.ratio.mean if p.ratio else None)
            rows["r_std"].append(p.ratio.std if p.ratio else None)
            rows["r_drift"].append(p.ratio.drift if p.ratio else None)
            rows["F_ratio"].append(p.F_ratio)
            rows["x_final"].append(p.x_final)
            rows["substeps"].append(p.substeps)
            rows["error"].append(p.error or "")
            rows["t_fail"].append(p.t_fail)
            for h in cfg.h_list:
                c = p.increments.get(h)
                rows[f"q_class_h{fmt(h)}"].append(c.label if c else "")
                rows[f"q_mean_h{fmt(h)}"].append(c.mean if c else None)
                rows[f"q_std_h{fmt(h)}"].append(c.std if c else None)
            if p.error:
                out.errors.append({"xi": xi, "path": p.path_index, "error": p.error, "t_fail": p.t_fail})
        out.csv(f"{tag}ensemble.csv", list(rows), list(rows.values()))
        lines.append(f"xi[{i}].value={fmt(float(xi))}\n")
        lines.append(_kv(f"xi[{i}].fraction.", summ.fractions))
        classified = summ.classified
        lines.append(f"xi[{i}].classified={len(classified)}\n")
        if classified:
            frs = np.array([p.F_ratio for p in classified])
            lines.append(f"xi[{i}].F_ratio.min={fmt(float(frs.min()))}\nxi[{i}].F_ratio.max={fmt(float(frs.max()))}\n")
            for h in cfg.h_list:
                near = [abs(p.increments[h].mean + p.lam) <= 0.15 for p in classified]
                lines.append(f"xi[{i}].increment_h{fmt(h)}.near_minus_lambda={fmt(float(np.mean(near)))}\n")
        # exported paths
        dat_cols = []
        for path in summ.kept:
            t = path.times
            pos = t > 0
            Finv = np.full(t.size, np.nan)
            Finv[pos] = scale.F_inv(t[pos])
            r = path.X / Finv
            q = np.full(t.size, np.nan)
            if path.ok:
                tq, qq = scaled_increment(path, h0, scale)
                q[: tq.size] = qq
                _, m_tail, Sig, trunc = tail_martingale(path, scale, sigma)
            else:
                m_tail = np.full(t.size, np.nan)
                Sig = np.full(t.size, np.nan)
            flags = []
            for j in range(t.size):
                f = []
                if not np.isfinite(path.X[j]):
                    f.append("failed")
                if math.isnan(Sig[j]):
                    f.append("sigma_undefined")
                if math.isnan(q[j]):
                    f.append("q_undefined")
                flags.append("|".join(f))
            out.csv(
                f"{tag}path_{path.path_index:04d}.csv",
                ["t", "X", "r", "q", "M_tail", "Sigma", "flag"],
                [t, path.X, r, q, m_tail, Sig, flags],
            )
            if not dat_cols:
                dat_cols.append(t[pos])
            dat_cols.append(r[pos])
        if dat_cols:
            out.dat(
                f"{tag}ratio_paths.dat",
                ["t"] + [f"r_path{p.path_index}" for p in summ.kept],
                dat_cols,
            )
    out.text("summary.txt", "".join(lines))
    rep = noise_report(scale, sigma, cfg.eps, cfg.h_list[0])
    out.text("criteria.txt", rep.to_keyvalue())


# -- criteria / construct / sweep ---------------------------------------------


def cmd_criteria(cfg: ExperimentConfig, out: _Outputs):
    parts = []
    if cfg.forcing_spec:
        g = cfg.forcing()
        T = min(g.horizon, max(cfg.T, 1e3)) if cfg.T else min(g.horizon, 1e6)
        tail, point = check_det_conditions(cfg.scale, g, T)

        parts.append(CriterionReport(det_tail_condition=tail, det_pointwise_condition=point).to_keyvalue())
        n = point.t.size
        tail_series = tail.series if tail.series.size == n else np.full(n, np.nan)
        out.csv("criteria_series.csv", ["t", "tail_ratio", "pointwise_ratio"], [point.t, tail_series, point.series])
    if cfg.noise_spec:
        parts.append(noise_report(cfg.scale, cfg.noise(), cfg.eps, cfg.h_list[0]).to_keyvalue())
    if not parts:
        raise ConfigError("criteria needs a [forcing] or [noise] table", field="forcing")
    out.text("criteria.txt", "".join(parts))


def cmd_construct(cfg: ExperimentConfig, out: _Outputs):
    spec = cfg.construct
    target = spec.get("target", "forcing")
    T = float(spec.get("T", 100.0))
    dt = float(spec.get("dt", 0.01))
    if target == "forcing":
        obj = cfg.forcing()
        if T > obj.horizon:
            raise ConfigError("construct.T: exceeds the forcing horizon", field="construct.T")
    else:
        obj = cfg.noise()
    n = int(round(T / dt))
    t = np.arange(n + 1) * dt
    construction = getattr(obj, "construction", None)
    seam_rows = {}
    if construction is not None:
        w = construction.widths(int(T) + 1)
        extra = []
        for k in range(int(math.floor(T)) + 1):
            wk = float(w[k])
            if wk >= IMPULSE_WIDTH * max(1.0, k):
                extra += [k + 0.5 * wk]
            mism = construction.seam_mismatch(k)
            for seam, dv, dd in mism:
                if seam <= T:
                    seam_rows[float(seam)] = max(dv, dd)
                    extra.append(float(seam))
        t = np.union1d(t, np.asarray(extra))
        t = t[t <= T]
    if target == "forcing":
        vals = obj.values(t)
        name = "g"
    else:
        vals = np.asarray(obj.values(t), dtype=float) ** 2
        name = "sigma2"
    seam_col = [seam_rows.get(float(x)) for x in t]
    out.csv("construct.csv", ["t", name, "seam_check"], [t, vals, seam_col])
    out.dat("construct.dat", ["t", name], [t, vals])
    info = {"target": target, "kind": obj.kind, "rows": t.size}
    if seam_rows:
        info["seam_max_mismatch"] = max(seam_rows.values())
        info["seams"] = len(seam_rows)
    if construction is not None:
        for tt in (10.0, 100.0):
            if tt <= construction.horizon:
                info[f"tail_ratio_t{fmt(tt)}"] = construction.tail_ratio(tt)
    out.text("construct.txt", _kv("", info))


def cmd_sweep(cfg: ExperimentConfig, out: _Outputs):
    sw = cfg.sweep
    betas = [float(b) for b in sw.get("beta", [1.5, 2.0, 3.0, 5.0])]
    gammas = sw.get("gamma", [round(0.6 + 0.2 * k, 10) for k in range(13)])
    gammas = [float(g) for g in (gammas if isinstance(gammas, list) else [gammas])]
    band = float(sw.get("band", 0.05))
    eps = sw.get("eps", list(cfg.eps))
    eps = tuple(float(e) for e in (eps if isinstance(eps, list) else [eps]))
    h = float(sw.get("h", cfg.h_list[0]))
    cols = {k: [] for k in (
        "beta", "gamma", "sigma_L2", "mu", "mu_numeric", "Sf", "delta", "mu_threshold", "Sf_threshold",
        "near_threshold", "coherent",
    )}
    for b in betas:
        model = NonlinearityModel(beta=b, a=cfg.model.a) if cfg.model.family.value == "pure_power" else cfg.model
        scale = DecayScale(model)
        for gam in gammas:
            rep = noise_report(scale, PowerDecayNoise(1.0, gam), eps, h)
            mu_thr = (b + 1.0) / (2.0 * (b - 1.0))
            sf_thr = b / (b - 1.0)
            near = any(abs(gam - x) < band for x in (0.5, mu_thr, sf_thr))
            mu = rep.mu_estimate.verdict
            sf = rep.Sf_verdict or "skipped"
            delta = rep.delta_test.verdict
            coherent = (
                rep.sigma_L2 == (gam > 0.5)
                and (not rep.sigma_L2 or (
                    (mu == "zero") == (gam > mu_thr)
                    and (sf == "finite") == (gam > sf_thr)
                    and (sf != "finite" or mu == "zero")
                    and (delta == "preserved") == (mu == "zero")
                ))
            )
            for k, v in zip(cols, (b, gam, rep.sigma_L2, mu, rep.mu_estimate.numeric_verdict, sf, delta, mu_thr, sf_thr, near, coherent)):
                cols[k].append(v)
    out.csv("sweep.csv", list(cols), list(cols.values()))
    code = {"zero": 0, "infinite": 1, "finite": 0, "preserved": 0, "not-preserved": 1}
    out.dat(
        "sweep.dat",
        ["beta", "gamma", "mu_infinite", "Sf_infinite", "delta_not_preserved"],
        [cols["beta"], cols["gamma"]]
        + [[code.get(v, math.nan) for v in cols[k]] for k in ("mu", "Sf", "delta")],
    )
    off_band = [c for c, n in zip(cols["coherent"], cols["near_threshold"]) if not n]
    out.extra["sweep_disagreements_off_band"] = int(sum(1 for c in off_band if not c))


# -- driver -------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="rvdecay", description="Decay-rate experiments for perturbed ODEs and SDEs.")
    p.add_argument("--version", action="version", version=f"rvdecay {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "run the experiment named by run.kind"),
        ("ode", "integrate the deterministic equation"),
        ("sde", "simulate an Euler-Maruyama ensemble"),
        ("criteria", "evaluate the preservation criteria"),
        ("construct", "sample a constructed forcing or noise intensity"),
        ("sweep", "criteria verdicts over a (beta, gamma) grid"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, type=Path, help="TOML experiment file")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides run.seed)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for ensembles")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed: must be an unsigned 64-bit integer", field="seed")
            cfg.seed = args.seed
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1", field="threads")
        if args.command == "sde" or (args.command == "run" and cfg.run_kind == "sde"):
            if cfg.seed is None:
                raise ConfigError("run.seed: required for sde runs (or pass --seed)", field="run.seed")
    except ConfigError as exc:
        print(f"rvdecay: config error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _Outputs(args.out)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        cmd = args.command
        if cmd == "run":
            cmd = {"ode": "ode", "ode-internal": "ode-internal", "sde": "sde"}[cfg.run_kind]
        if cmd == "ode":
            cmd_ode(cfg, out, internal=cfg.run_kind == "ode-internal")
        elif cmd == "ode-internal":
            cmd_ode(cfg, out, internal=True)
        elif cmd == "sde":
            cmd_sde(cfg, out, args.threads)
        elif cmd == "criteria":
            cmd_criteria(cfg, out)
        elif cmd == "construct":
            cmd_construct(cfg, out)
        else:
            cmd_sweep(cfg, out)
        payload = {
            "command": args.command,
            "config_file": args.config.name,
            "config_sha256": cfg.sha256,
            "master_seed": cfg.seed,
            "rng": RNG_SCHEME,
            "version": __version__,
            "config": cfg.to_dict(),
            "errors": out.errors,
            **out.extra,
        }
        write_manifest(args.out, payload, out.names)
    except ConfigError as exc:
        print(f"rvdecay: config error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to one exit status
        msg = f"{type(exc).__name__}: {exc}"
        print(f"rvdecay: runtime failure: {msg}", file=sys.stderr)
        try:
            payload = {"command": args.command, "config_sha256": cfg.sha256, "master_seed": cfg.seed,
                       "version": __version__, "errors": out.errors, "fatal": msg}
            write_manifest(args.out, payload, [n for n in out.names if (args.out / n).exists()])
        except Exception:  # noqa: BLE001 - the exit status already reports the failure
            pass
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
