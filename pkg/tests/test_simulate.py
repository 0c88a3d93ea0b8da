import math

import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.stats import kstest

from affinesde.linalg import expm
from affinesde.model import (CallableDrift, ConstantDrift, DiffusionSpec,
                             ExpDecay, PeriodicDrift, PowerLaw)
from affinesde.simulate import (SCHEME_EULER, CovarianceError, PathEnsemble,
                                SimConfig, bessel_scenario, simulate_X,
                                simulate_X_periodic, simulate_Y,
                                step_covariance)

OU_DRIFT = ConstantDrift(np.array([[-1.0]]))
UNIT_SIGMA = DiffusionSpec.constant([[1.0]])


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0, t_end=1.0, paths=1, seed=0)
    with pytest.raises(ValueError):
        SimConfig(dt=1.0, t_end=0.5, paths=1, seed=0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, t_end=1.0, paths=0, seed=0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, t_end=1.0, paths=1, seed=0, scheme="midpoint")
    with pytest.raises(ValueError):
        SimConfig(dt=0.3, t_end=1.0, paths=1, seed=0)   # not a multiple


# ---------------------------------------------------------------------------
# step covariance
# ---------------------------------------------------------------------------

def test_step_covariance_ou_closed_form():
    for dt in (0.05, 0.25, 1.0):
        Q = step_covariance(OU_DRIFT, UNIT_SIGMA, 0.0, dt)
        assert Q[0, 0] == pytest.approx((1 - math.exp(-2 * dt)) / 2,
                                        abs=1e-12)


def test_step_covariance_zero_sigma():
    Q = step_covariance(OU_DRIFT, DiffusionSpec.constant([[0.0]]), 1.0, 0.5)
    assert np.all(Q == 0.0)


def test_step_covariance_brownian_increment():
    S = np.array([[1.0, 0.5], [0.0, 2.0]])
    drift = ConstantDrift(np.zeros((2, 2)))
    Q = step_covariance(drift, DiffusionSpec.constant(S), 3.0, 0.7)
    np.testing.assert_allclose(Q, 0.7 * S @ S.T, atol=1e-11)


def test_step_covariance_psd_and_symmetric():
    A = np.array([[-1.0, 2.0], [0.0, -3.0]])
    spec = DiffusionSpec.envelope(ExpDecay(1.0, 0.5), [[1.0, 0.0], [1.0, 1.0]])
    Q = step_covariance(ConstantDrift(A), spec, 2.0, 0.4)
    np.testing.assert_allclose(Q, Q.T)
    assert np.all(np.linalg.eigvalsh(Q) >= 0.0)


# ---------------------------------------------------------------------------
# auxiliary process Y
# ---------------------------------------------------------------------------

def test_Y_deterministic_decay_with_start_hook():
    cfg = SimConfig(dt=0.125, t_end=4.0, paths=3, seed=1)
    ens = simulate_Y(DiffusionSpec.constant([[0.0]]), cfg, y0=[2.0])
    expect = 2.0 * np.exp(-ens.times)
    for p in range(3):
        np.testing.assert_allclose(ens.states[p, :, 0], expect, atol=1e-12)


def test_Y_stationary_variance():
    cfg = SimConfig(dt=0.25, t_end=16.0, paths=4000, seed=42)
    ens = simulate_Y(DiffusionSpec.constant([[1.5]]), cfg)
    target = 1.5 ** 2 / 2
    final = ens.states[:, -1, 0]
    est = float(np.var(final, ddof=1))
    se = est * math.sqrt(2.0 / (len(final) - 1))
    assert abs(est - target) <= 3 * se


def test_Y_increments_are_gaussian():
    cfg = SimConfig(dt=0.5, t_end=50.0, paths=100, seed=3)
    ens = simulate_Y(UNIT_SIGMA, cfg)
    q = (1 - math.exp(-2 * cfg.dt)) / 2
    y = ens.states[:, :, 0]
    v = (y[:, 1:] - math.exp(-cfg.dt) * y[:, :-1]) / math.sqrt(q)
    sample = v.ravel()
    assert sample.size == 10_000
    assert kstest(sample, "norm").pvalue > 0.01


# ---------------------------------------------------------------------------
# the main process X
# ---------------------------------------------------------------------------

def test_X_zero_noise_matches_matrix_exponential():
    A = np.array([[-1.0, 0.5], [0.2, -2.0]])
    xi = np.array([1.0, -1.0])
    cfg = SimConfig(dt=0.25, t_end=5.0, paths=2, seed=0)
    ens = simulate_X(ConstantDrift(A), DiffusionSpec.constant(np.zeros((2, 2))),
                     xi, cfg)
    for j, t in enumerate(ens.times):
        np.testing.assert_allclose(ens.states[0, j], expm(A, t) @ xi,
                                   atol=1e-10)


def test_X_reduces_to_Y():
    spec = DiffusionSpec.constant([[0.7]])
    cfg = SimConfig(dt=0.5, t_end=8.0, paths=5, seed=9)
    a = simulate_Y(spec, cfg)
    b = simulate_X(ConstantDrift(-np.eye(1)), spec, [0.0], cfg)
    np.testing.assert_array_equal(a.states, b.states)


def test_X_mean_square_matches_analytic():
    A = np.array([[-1.0, 0.5], [0.0, -2.0]])
    S = np.array([[1.0, 0.0], [0.3, 0.5]])
    xi = np.array([1.0, 2.0])
    t = 2.0
    # oracle: E||X(t)||^2 = ||e^{At} xi||^2 + tr int_0^t e^{As} SS^T e^{A^T s} ds
    det_part = float(np.sum((expm(A, t) @ xi) ** 2))
    integ, err = quad_vec(lambda s: expm(A, s) @ S @ S.T @ expm(A.T, s),
                          0.0, t, epsabs=1e-12, epsrel=0.0, norm="max")
    assert err < 1e-11
    target = det_part + float(np.trace(integ))

    cfg = SimConfig(dt=0.125, t_end=2.0, paths=6000, seed=5)
    ens = simulate_X(ConstantDrift(A), DiffusionSpec.constant(S), xi, cfg)
    sq = ens.norms[:, -1] ** 2
    est = float(np.mean(sq))
    se = float(np.std(sq, ddof=1)) / math.sqrt(len(sq))
    assert abs(est - target) <= 3 * se


def test_reproducibility_bit_identical():
    spec = DiffusionSpec.envelope(ExpDecay(1.0, 0.2), [[1.0, 0.5], [0.0, 1.0]])
    cfg = SimConfig(dt=0.25, t_end=8.0, paths=7, seed=123)
    A = ConstantDrift(np.array([[-1.0, 0.0], [0.5, -0.5]]))
    a = simulate_X(A, spec, [1.0, 1.0], cfg)
    b = simulate_X(A, spec, [1.0, 1.0], cfg)
    np.testing.assert_array_equal(a.states, b.states)
    assert a.seeds == b.seeds


def test_scheme_agreement_richardson():
    # Euler-Maruyama's stationary variance bias for the scalar OU shrinks
    # linearly in dt; the exact scheme has none
    target = 0.5
    errs = []
    for dt in (0.1, 0.05, 0.025):
        cfg = SimConfig(dt=dt, t_end=40.0, paths=400, seed=77,
                        scheme=SCHEME_EULER)
        ens = simulate_X(OU_DRIFT, UNIT_SIGMA, [0.0], cfg)
        half = ens.states.shape[1] // 2
        tail = ens.states[:, half:, 0].ravel()
        errs.append(abs(float(np.var(tail)) - target))
    assert errs[0] > errs[2]
    cfg = SimConfig(dt=0.025, t_end=40.0, paths=400, seed=77,
                    scheme=SCHEME_EULER)
    em = simulate_X(OU_DRIFT, UNIT_SIGMA, [0.0], cfg)
    exact = simulate_X(OU_DRIFT, UNIT_SIGMA, [0.0],
                       SimConfig(dt=0.025, t_end=40.0, paths=400, seed=78))
    a, b = em.norms[:, -1] ** 2, exact.norms[:, -1] ** 2
    se = math.hypot(float(np.std(a, ddof=1)) / math.sqrt(len(a)),
                    float(np.std(b, ddof=1)) / math.sqrt(len(b)))
    assert abs(float(np.mean(a)) - float(np.mean(b))) <= 3 * se


def test_euler_zero_noise_deterministic():
    A = np.array([[-1.0]])
    cfg = SimConfig(dt=0.001, t_end=1.0, paths=1, seed=0, scheme=SCHEME_EULER)
    ens = simulate_X(ConstantDrift(A), DiffusionSpec.constant([[0.0]]),
                     [1.0], cfg)
    assert ens.states[0, -1, 0] == pytest.approx(math.exp(-1.0), abs=1e-3)


def test_nonfinite_states_rejected():
    with pytest.raises(FloatingPointError):
        PathEnsemble(times=np.array([0.0, 1.0]),
                     states=np.array([[[0.0], [math.inf]]]),
                     config=SimConfig(dt=1.0, t_end=1.0, paths=1, seed=0),
                     seeds=((0, 0),))


# ---------------------------------------------------------------------------
# periodic drift
# ---------------------------------------------------------------------------

def test_periodic_zero_noise_floquet_decay():
    drift = CallableDrift(fn=lambda t: np.array([[-1.0 + math.cos(t)]]), d=1,
                          period=2 * math.pi)
    dt = 2 * math.pi / 64
    cfg = SimConfig(dt=dt, t_end=2 * math.pi, paths=1, seed=0, cov_tol=1e-12)
    ens = simulate_X_periodic(drift, DiffusionSpec.constant([[0.0]]), [1.0], cfg)
    assert ens.states[0, -1, 0] == pytest.approx(math.exp(-2 * math.pi),
                                                 rel=1e-8)


def test_periodic_constant_reduces_bit_identically():
    A = np.array([[-1.0, 0.3], [0.0, -0.5]])
    periodic = PeriodicDrift(period=1.0, times=[0.0, 0.5], values=[A, A])
    spec = DiffusionSpec.envelope(ExpDecay(1.0, 0.5), np.eye(2))
    cfg = SimConfig(dt=0.25, t_end=4.0, paths=4, seed=31)
    a = simulate_X_periodic(periodic, spec, [1.0, 0.0], cfg)
    b = simulate_X(ConstantDrift(A), spec, [1.0, 0.0], cfg)
    np.testing.assert_array_equal(a.states, b.states)


def test_periodic_requires_dt_dividing_period():
    drift = CallableDrift(fn=lambda t: np.array([[math.cos(t) - 1.0]]), d=1,
                          period=2 * math.pi)
    cfg = SimConfig(dt=0.25, t_end=8.0, paths=1, seed=0)
    with pytest.raises(ValueError):
        simulate_X_periodic(drift, UNIT_SIGMA, [0.0], cfg)


def test_periodic_stable_with_fading_noise_decays():
    drift = CallableDrift(fn=lambda t: np.array([[-1.0 + math.cos(t)]]), d=1,
                          period=2 * math.pi)
    dt = 2 * math.pi / 32
    cfg = SimConfig(dt=dt, t_end=64 * 2 * math.pi, paths=40, seed=8)
    sigma = DiffusionSpec.envelope(ExpDecay(1.0, 0.1), [[1.0]])
    ens = simulate_X_periodic(drift, sigma, [1.0], cfg)
    T = ens.times[-1]
    cps = [T / 16, T / 8, T / 4, T / 2]
    meds = []
    for c in cps:
        i = int(np.searchsorted(ens.times, c))
        meds.append(float(np.median(np.max(ens.norms[:, i:], axis=1))))
    assert all(b < a for a, b in zip(meds, meds[1:]))


# ---------------------------------------------------------------------------
# benchmark scenario
# ---------------------------------------------------------------------------

def test_bessel_requires_dimension():
    with pytest.raises(ValueError):
        bessel_scenario(2, -1.0, SimConfig(dt=0.1, t_end=1.0, paths=1, seed=0))


def test_bessel_decaying_noise_shrinks():
    cfg = SimConfig(dt=0.05, t_end=128.0, paths=30, seed=4)
    ens = bessel_scenario(5, -1.0, cfg)
    early = float(np.median(np.max(ens.norms[:, :200], axis=1)))
    late = float(np.median(ens.norms[:, -1]))
    assert late < 0.1 * early


def test_derived_series():
    cfg = SimConfig(dt=0.5, t_end=4.0, paths=2, seed=6)
    ens = simulate_Y(UNIT_SIGMA, cfg)
    np.testing.assert_allclose(ens.norms, np.abs(ens.states[:, :, 0]))
    assert np.all(np.diff(ens.running_sup, axis=1) >= 0)
    assert np.all(ens.running_avg_sq >= 0)
    # trapezoid average against a direct computation at the final time
    sq = ens.norms[0] ** 2
    direct = np.trapezoid(sq, ens.times) / ens.times[-1]
    assert ens.running_avg_sq[0, -1] == pytest.approx(direct, rel=1e-12)
