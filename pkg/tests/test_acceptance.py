"""One test per acceptance criterion; each prints a PASS/FAIL line."""

import filecmp
import math
import time
from pathlib import Path

import numpy as np
import pytest

from rvdecay import cli
from rvdecay.classify import Verdict, classify
from rvdecay.criteria import check_det_conditions, noise_report
from rvdecay.decay_scale import DecayScale
from rvdecay.deterministic import diagnostics, integrate_ode
from rvdecay.nonlinearity import NonlinearityModel
from rvdecay.perturbations import (
    GammaSpec,
    Oscillating,
    PowerBase,
    PowerDecay,
    PowerDecayNoise,
    ScaledDerivativeRate,
    SpikeConstruction,
    ZeroForcing,
    ZeroLimitSynthetic,
)
from rvdecay.stochastic import EnsembleConfig, run_ensemble, tail_martingale

CUBE = NonlinearityModel(beta=3.0)
SCALE = DecayScale(CUBE)
CONFIGS = Path(__file__).parent.parent / "configs"


def cube_F_inv(t):
    return (1.0 + 2.0 * np.asarray(t, dtype=float)) ** -0.5


def test_criterion_01_decay_scale_oracle(acceptance):
    t = np.concatenate([[0.0], np.logspace(-6, 6, 999)])
    start = time.perf_counter()
    numeric = DecayScale(CUBE, mode="numeric")
    got = numeric.F_inv(t)
    elapsed = time.perf_counter() - start
    err = float(np.max(np.abs(got / cube_F_inv(t) - 1.0)))
    acceptance(1, err < 1e-8 and elapsed < 1.0, f"max rel err {err:.2e} over {t.size} points, {elapsed:.3f} s")


def test_criterion_02_unperturbed_exactness(acceptance):
    tr = integrate_ode(CUBE, ZeroForcing(), 1.0, 1e4)
    dev = float(np.max(np.abs(tr.values / cube_F_inv(tr.times) - 1.0)))
    acceptance(2, dev < 1e-3, f"max |x/F^-1 - 1| = {dev:.2e} over {tr.times.size} checkpoints")


def test_criterion_03_tail_condition_instances(acceptance):
    start = time.perf_counter()
    T = 1e4

    def ratio_class(g):
        tr = integrate_ode(CUBE, g, 1.0, T)
        d = diagnostics(tr, SCALE, g)
        return classify(d.t, d.r)

    power = PowerDecay(2.0, 3.0)
    c_pow = ratio_class(power)
    tail_pow, _ = check_det_conditions(SCALE, power)
    c_sdr = ratio_class(ScaledDerivativeRate(SCALE, 1.0))
    c_zls = ratio_class(ZeroLimitSynthetic(CUBE, 1.0))
    elapsed = time.perf_counter() - start
    ok = (
        c_pow.lam == 1
        and tail_pow.verdict == "holds"
        and c_sdr.verdict in (Verdict.OTHER_FINITE, Verdict.NO_LIMIT)
        and c_zls.lam == 0
        and elapsed < 10.0
    )
    detail = (
        f"power {c_pow.label} (tail {tail_pow.verdict}), scaled-rate {c_sdr.label} "
        f"(mean {c_sdr.mean:.4f}), zero-limit {c_zls.label}, {elapsed:.2f} s"
    )
    acceptance(3, ok, detail)


def test_criterion_04_oscillating(acceptance):
    g = Oscillating(GammaSpec("1+t"), 3)
    a2, a3 = g.abs_partial(1e2), g.abs_partial(1e3)
    ts = np.logspace(3, 4, 201)
    tail_ratio = float(max(abs(g.tail(t)) / SCALE.F_inv(t) for t in ts))
    tr = integrate_ode(CUBE, g, 1.0, 1e4)
    d = diagnostics(tr, SCALE, g)
    if tr.bracketed:
        lo, hi = classify(d.t, d.r_lower), classify(d.t, d.r_upper)
        lam = lo.lam if lo.lam == hi.lam else None
    else:
        lam = classify(d.t, d.r).lam
    ok = a3 > 10 * a2 and tail_ratio < 0.05 and lam in (-1, 0, 1)
    acceptance(4, ok, f"int|g| ratio {a3 / a2:.1f}, max tail/F^-1 on [1e3,1e4] {tail_ratio:.2e}, lambda {lam}")


def test_criterion_05_spike_construction(acceptance):
    k = SpikeConstruction(PowerBase(1.0, 2.0), GammaSpec("t"), horizon=1e4)
    seam = max(max(dv, dd) for n in range(100) for _, dv, dd in k.seam_mismatch(n))
    ts = np.concatenate([np.linspace(10, 100, 91), np.linspace(10.37, 99.37, 90)])
    ratios = np.array([k.tail_ratio(t) for t in ts])
    peaks = []
    for n in range(20, 101):
        centre = k.centre(n)
        peaks.append(k.value(centre) / k.gamma_plus(centre))
    peaks = np.array(peaks)
    ok = seam < 1e-6 and ratios.min() >= 1.0 and ratios.max() <= 1.05 and peaks.min() >= 0.99 and peaks.max() <= 1.0
    acceptance(
        5,
        ok,
        f"seam mismatch {seam:.1e}; tail ratio [{ratios.min():.4f}, {ratios.max():.4f}]; "
        f"peak ratio [{peaks.min():.6f}, {peaks.max():.6f}] for n=20..100",
    )


@pytest.fixture(scope="module")
def baseline():
    cfg = EnsembleConfig(CUBE, PowerDecayNoise(1.0, 2.5), xi=1.0, T=1e4, dt=1e-2, n_paths=100, seed=1)
    start = time.perf_counter()
    summ = run_ensemble(cfg, SCALE)
    return summ, time.perf_counter() - start


def test_criterion_06_sde_baseline(acceptance, baseline):
    summ, elapsed = baseline
    n = len(summ.paths)
    cls = summ.classified
    pm = sum(p.lam in (-1, 1) for p in cls) / n
    zero = sum(p.lam == 0 for p in cls) / n
    fr = np.array([p.F_ratio for p in cls])
    near = np.mean([abs(p.increments[1.0].mean + p.lam) <= 0.15 for p in cls])
    ok = pm >= 0.95 and zero <= 0.02 and fr.min() >= 0.8 and fr.max() <= 1.2 and near >= 0.9 and elapsed < 300
    acceptance(
        6,
        ok,
        f"+-1 {pm:.2f}, zero {zero:.2f}, F(X(T))/T in [{fr.min():.4f}, {fr.max():.4f}], "
        f"increment near -lambda {near:.2f}, {elapsed:.1f} s",
    )


def test_criterion_07_degraded_derivative(acceptance):
    # the baseline protocol with gamma = 1.5, run to T = 1e5 as in the long-horizon figures
    cfg = EnsembleConfig(CUBE, PowerDecayNoise(1.0, 1.5), xi=1.0, T=1e5, dt=1e-2, n_paths=100, seed=1)
    summ = run_ensemble(cfg, SCALE)
    n = len(summ.paths)
    classified = len(summ.classified) / n
    noisy = sum(p.increments and p.increments[1.0].std > 0.2 for p in summ.paths) / n
    acceptance(7, classified >= 0.8 and noisy >= 0.8, f"classified {classified:.2f}, increment std > 0.2 for {noisy:.2f}")


def test_criterion_08_coherence_grid(acceptance):
    gammas = np.round(np.arange(0.6, 3.0 + 1e-9, 0.2), 10)
    checked, bad = 0, []
    for beta in (1.5, 2.0, 3.0, 5.0):
        scale = DecayScale(NonlinearityModel(beta=beta))
        mu_t, sf_t = (beta + 1) / (2 * (beta - 1)), beta / (beta - 1)
        for gamma in gammas:
            if min(abs(gamma - 0.5), abs(gamma - mu_t), abs(gamma - sf_t)) <= 0.05:
                continue
            checked += 1
            rep = noise_report(scale, PowerDecayNoise(1.0, float(gamma)), h_experiment=())
            mu_zero = rep.mu_estimate.verdict == "zero"
            sf_finite = rep.Sf_verdict == "finite"
            checks = {
                "L2": rep.sigma_L2 == (gamma > 0.5),
                "mu": mu_zero == (gamma > mu_t),
                "Sf": sf_finite == (gamma > sf_t),
                "Sf=>mu": (not sf_finite) or mu_zero,
                "delta": (rep.delta_test.verdict == "preserved") == mu_zero,
            }
            bad += [(beta, float(gamma), k) for k, v in checks.items() if not v]
    acceptance(8, not bad, f"{checked} grid points, {len(bad)} disagreements {bad[:3]}")


def test_criterion_09_lil_diagnostic(acceptance):
    sigma = PowerDecayNoise(1.0, 2.5)
    T = 1e4
    cfg = EnsembleConfig(CUBE, sigma, xi=1.0, T=T, dt=1e-2, n_paths=200, seed=3, keep_paths=200)
    summ = run_ensemble(cfg, SCALE)
    peaks = []
    for path in summ.kept:
        t, m_tail, sig, _ = tail_martingale(path, SCALE, sigma)
        w = (t >= T / 10) & (t <= T / 2)
        peaks.append(float(np.max(m_tail[w] / sig[w])))
    peaks = np.sort(peaks)
    top = float(np.mean(peaks[-len(peaks) // 10 :]))
    acceptance(9, 0.5 <= top <= 1.5, f"top-decile mean of max M_tail/Sigma = {top:.3f} over {len(peaks)} paths")


def test_criterion_10_reproducibility(acceptance, tmp_path):
    mismatched = []
    configs = sorted(CONFIGS.glob("*.toml"))
    for path in configs:
        a, b = tmp_path / f"{path.stem}_a", tmp_path / f"{path.stem}_b"
        codes = [cli.main(["run" if "sde" in path.stem else _command(path), "--config", str(path), "--out", str(d)])
                 for d in (a, b)]
        names = sorted(p.name for p in a.iterdir())
        same = names == sorted(p.name for p in b.iterdir())
        _, diff, errs = filecmp.cmpfiles(a, b, names, shallow=False)
        if codes != [0, 0] or not same or diff or errs:
            mismatched.append(path.stem)
    acceptance(10, not mismatched, f"{len(configs)} configs rerun, byte-identical outputs; mismatches {mismatched}")


def _command(path):
    stem = path.stem
    for cmd in ("criteria", "construct", "sweep"):
        if stem.startswith(cmd):
            return cmd
    return "ode"
