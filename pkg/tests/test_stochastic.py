import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvdecay.decay_scale import DecayScale
from rvdecay.deterministic import euler_deterministic
from rvdecay.errors import DomainError, SimulationError
from rvdecay.nonlinearity import NonlinearityModel
from rvdecay.perturbations import CompactNoise, PowerDecayNoise, ZeroNoise
from rvdecay.stochastic import (
    EnsembleConfig,
    normal_stream,
    run_ensemble,
    scaled_increment,
    simulate_path,
    tail_martingale,
)

CUBE = NonlinearityModel(beta=3.0)
SCALE = DecayScale(CUBE)
BASE_NOISE = PowerDecayNoise(1.0, 2.5)


@given(
    seed=st.integers(min_value=0, max_value=2 ** 64 - 1),
    path=st.integers(min_value=0, max_value=2 ** 32),
    start=st.integers(min_value=0, max_value=50),
    count=st.integers(min_value=1, max_value=30),
)
@settings(max_examples=100, deadline=None)
def test_normal_stream_is_addressable(seed, path, start, count):
    whole = normal_stream(seed, path, 0, start + count)
    assert np.array_equal(normal_stream(seed, path, start, count), whole[start:])


def test_stream_keys_use_all_64_bits():
    a = normal_stream(2 ** 63 + 5, 1, 0, 8)
    b = normal_stream(2 ** 63 + 6, 1, 0, 8)
    assert not np.array_equal(a, b)
    from rvdecay.stochastic import _bridge_normals

    assert not np.array_equal(_bridge_normals(1, 0, 0, 8), _bridge_normals(1, 1, 0, 8))


def test_normal_stream_is_standard_normal():
    z = normal_stream(123, 4, 0, 200_000)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01
    assert not np.array_equal(z[:100], normal_stream(123, 5, 0, 100))


def test_euler_maruyama_recursion_is_exact():
    dt, T = 0.01, 5.0
    p = simulate_path(CUBE, BASE_NOISE, 0.7, T, dt, seed=9, path_index=3, record_dt=dt)
    n = int(round(T / dt))
    z = normal_stream(9, 3, 0, n)
    x = 0.7
    for k in range(n):
        x = x - CUBE(x) * dt + BASE_NOISE(k * dt) * math.sqrt(dt) * z[k]
        assert p.X[k + 1] == x
    assert p.substeps == 0


@pytest.mark.parametrize("xi", [1.0, 10.0, -30.0])
def test_zero_noise_matches_deterministic_euler(xi):
    p = simulate_path(CUBE, ZeroNoise(), xi, 10.0, 1e-3, seed=1, record_dt=0.1)
    t, x = euler_deterministic(CUBE, xi, 10.0, 1e-3, record_dt=0.1)
    assert np.array_equal(p.X, x)
    assert np.allclose(p.times, t)
    assert (p.substeps > 0) == (xi * xi * 1e-3 > 0.5)


def test_zero_noise_increment_tends_to_minus_one():
    p = simulate_path(CUBE, ZeroNoise(), 1.0, 1e3, 1e-2, seed=0)
    t, q = scaled_increment(p, 1.0, SCALE)
    assert abs(q[-1] + 1) < 1e-2


def test_increment_step_must_divide():
    p = simulate_path(CUBE, ZeroNoise(), 1.0, 10.0, 1e-2, seed=0)
    with pytest.raises(DomainError):
        scaled_increment(p, 0.015, SCALE)
    with pytest.raises(DomainError):
        scaled_increment(p, 0.5, SCALE)  # finer than the record grid


@pytest.mark.parametrize("xi", [1.0, 20.0])
def test_negated_noise_negates_path(xi):
    a = simulate_path(CUBE, BASE_NOISE, xi, 200.0, 1e-2, seed=5, path_index=2)
    b = simulate_path(CUBE, BASE_NOISE, -xi, 200.0, 1e-2, seed=5, path_index=2, negate_noise=True)
    assert np.array_equal(a.X, -b.X) and np.array_equal(a.M, -b.M)


def test_seed_determinism_and_independence():
    a = simulate_path(CUBE, BASE_NOISE, 1.0, 100.0, 1e-2, seed=5, path_index=1)
    b = simulate_path(CUBE, BASE_NOISE, 1.0, 100.0, 1e-2, seed=5, path_index=1)
    c = simulate_path(CUBE, BASE_NOISE, 1.0, 100.0, 1e-2, seed=5, path_index=2)
    assert np.array_equal(a.X, b.X)
    assert not np.array_equal(a.X, c.X)


def test_invalid_grids():
    with pytest.raises(DomainError):
        simulate_path(CUBE, BASE_NOISE, 1.0, 10.0, 0.03, seed=0)
    with pytest.raises(DomainError):
        simulate_path(CUBE, BASE_NOISE, 1.0, 10.0, 0.01, seed=0, record_dt=3.0)
    with pytest.raises(DomainError):
        simulate_path(CUBE, BASE_NOISE, 1.0, -1.0, 0.01, seed=0)


def test_blowup_guard():
    loud = CompactNoise(1e9, 1.0)
    with pytest.raises(SimulationError) as info:
        simulate_path(CUBE, loud, 0.0, 10.0, 1e-2, seed=0)
    assert 0 < info.value.t_fail <= 1.0
    p = simulate_path(CUBE, loud, 0.0, 10.0, 1e-2, seed=0, raise_on_error=False)
    assert not p.ok and p.t_fail == info.value.t_fail


def test_tail_martingale_vanishes_after_support():
    s = CompactNoise(1.0, 5.0)
    p = simulate_path(CUBE, s, 1.0, 20.0, 1e-2, seed=2, record_dt=0.5)
    t, mt, sig, trunc = tail_martingale(p, SCALE, s)
    assert np.all(mt[t >= 5.0] == 0.0) and trunc == 0.0
    assert np.any(mt[t < 5.0] != 0.0)


def test_tail_martingale_normaliser():
    p = simulate_path(CUBE, BASE_NOISE, 1.0, 100.0, 1e-2, seed=2)
    t, mt, sig, trunc = tail_martingale(p, SCALE, BASE_NOISE)
    vs = BASE_NOISE.varsigma_array(t)
    assert np.all(np.isnan(sig[vs >= math.exp(-1)]))
    ok = vs < math.exp(-1)
    assert np.allclose(sig[ok], np.sqrt(2 * vs[ok] * np.log(np.log(1 / vs[ok]))))
    assert trunc == pytest.approx(BASE_NOISE.varsigma(100.0))


def test_tail_martingale_has_mean_zero():
    T = 100.0
    tails = []
    for i in range(200):
        p = simulate_path(CUBE, BASE_NOISE, 1.0, T, 1e-2, seed=77, path_index=i, record_dt=1.0)
        tails.append(tail_martingale(p, SCALE, BASE_NOISE)[1])
    tails = np.array(tails)
    for t in (0.0, 1.0, 5.0, 20.0):
        i = int(t)
        var = BASE_NOISE.varsigma(t) - BASE_NOISE.varsigma(T)
        assert abs(tails[:, i].mean()) < 3 * math.sqrt(var / 200)
        # the sample variance matches the Ito isometry
        assert tails[:, i].var() == pytest.approx(var, rel=0.3)


def test_coupled_coarse_step_uses_summed_increments():
    fine = simulate_path(CUBE, ZeroNoise(), 1.0, 10.0, 1e-2, seed=0)
    coarse = simulate_path(CUBE, ZeroNoise(), 1.0, 10.0, 1e-2, seed=0, coarsen=2)
    assert coarse.dt == 2e-2 and np.max(np.abs(coarse.X - fine.X)) < 5e-3
    # with noise, the coarse path's total stochastic integral is driven by the same Brownian path
    s = CompactNoise(1.0, 1e9)
    a = simulate_path(CUBE, s, 0.0, 10.0, 1e-2, seed=4)
    b = simulate_path(CUBE, s, 0.0, 10.0, 1e-2, seed=4, coarsen=2)
    assert abs(a.M[-1] - b.M[-1]) < 0.05


def test_ensemble_is_deterministic_and_thread_independent():
    cfg = EnsembleConfig(CUBE, BASE_NOISE, T=1e3, n_paths=6, seed=11)
    a = run_ensemble(cfg, SCALE)
    b = run_ensemble(EnsembleConfig(CUBE, BASE_NOISE, T=1e3, n_paths=6, seed=11, threads=3), SCALE)
    assert repr(a.paths) == repr(b.paths) and a.fractions == b.fractions
    assert sum(a.fractions.values()) == pytest.approx(1.0)


def test_ensemble_records_path_errors():
    cfg = EnsembleConfig(CUBE, CompactNoise(1e9, 1.0), xi=0.0, T=10.0, n_paths=3, seed=0)
    s = run_ensemble(cfg, SCALE)
    assert all(p.error and p.t_fail for p in s.paths)
    assert s.fractions["unclassified"] == 1.0


def test_ensemble_zero_noise_matches_deterministic_class():
    s = run_ensemble(EnsembleConfig(CUBE, ZeroNoise(), xi=1.0, T=1e4, n_paths=2, seed=0), SCALE)
    assert all(p.lam == 1 for p in s.paths)
    assert all(p.increments[1.0].lam == -1 for p in s.paths)


def test_ensemble_divergent_noise_never_classifies():
    s = run_ensemble(EnsembleConfig(CUBE, PowerDecayNoise(1.0, 0.4), T=1e4, n_paths=10, seed=3), SCALE)
    assert s.fractions["unclassified"] == 1.0


def test_ensemble_config_validation():
    with pytest.raises(DomainError):
        EnsembleConfig(CUBE, BASE_NOISE, n_paths=0)
    with pytest.raises(DomainError):
        EnsembleConfig(CUBE, BASE_NOISE, seed=-1)


def test_step_halving_changes_ratio_mean_little():
    n = 10
    coarse = run_ensemble(EnsembleConfig(CUBE, BASE_NOISE, T=1e4, n_paths=n, seed=1, coarsen=2, dt=1e-2), SCALE)
    fine = run_ensemble(EnsembleConfig(CUBE, BASE_NOISE, T=1e4, n_paths=n, seed=1, dt=1e-2), SCALE)
    for a, b in zip(coarse.paths, fine.paths):
        assert abs(a.ratio.mean - b.ratio.mean) < 0.05 * abs(b.ratio.mean)


def test_zero_start_still_selects_a_sign():
    s = run_ensemble(EnsembleConfig(CUBE, BASE_NOISE, xi=0.0, T=1e4, n_paths=10, seed=8), SCALE)
    lams = [p.lam for p in s.classified]
    assert len(lams) >= 8 and set(lams) <= {-1, 1}
