import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fluctlab.coupling import constant, gaussian_bump
from fluctlab.dynamics import IntegratorConfig, evolve
from fluctlab.fluctuation import (GeneratorTranslates, ResidualIntegrals, TestFunction,
                                  a_hat_scan, bg_residual, clt_observable, clt_time_variance,
                                  empirical_time_covariance, field_eval, field_series,
                                  field_variance_prediction, fit_ou_decay,
                                  ou_covariance_predict, paired_residual_difference,
                                  residual_integrals, translates)
from fluctlab.model import ModelParams, Observable, apply_generator, currents, sample_equilibrium
from fluctlab.polynomial import LocalFunction as LF
from fluctlab.variational import _psi, gradient_type_variance

from conftest import polynomials

BUMP = gaussian_bump(0.5, 1.0)


# --- test functions ----------------------------------------------------------------

@pytest.mark.parametrize("H", [TestFunction.fourier(1), TestFunction.fourier(3, 0.4),
                               TestFunction.constant()])
def test_test_function_calculus(H):
    u = np.linspace(0.05, 0.95, 7)
    h = 1e-5
    assert np.allclose(H.deriv(u), (H(u + h) - H(u - h)) / (2 * h), rtol=1e-6, atol=1e-6)
    assert np.allclose(H.deriv2(u), (H.deriv(u + h) - H.deriv(u - h)) / (2 * h), rtol=1e-5,
                       atol=1e-5)
    assert H(1e-12) == pytest.approx(H(1.0), abs=1e-9)
    assert TestFunction.from_config(H.to_config()) == H


def test_fourier_normalization_and_tabulated():
    H = TestFunction.fourier(2)
    u = np.arange(4096) / 4096
    assert np.mean(H(u) ** 2) == pytest.approx(1.0)
    T = TestFunction.tabulated(H(u))
    assert np.allclose(T(u[::7]), H(u[::7]))
    assert np.allclose(T.deriv(u[::7]), H.deriv(u[::7]), rtol=1e-4, atol=1e-3)
    with pytest.raises(ValueError):
        TestFunction.fourier(-1)


def test_discrete_gradient():
    H = TestFunction.fourier(1)
    N = 50
    g = H.discrete_gradient(N)
    x = np.arange(N) / N
    assert np.allclose(g, N * (H(x + 1 / N) - H(x)))
    assert abs(g.sum()) < 1e-10


# --- field ---------------------------------------------------------------------------

def test_field_eval_examples(rng):
    N, y = 16, 1.4
    H = TestFunction.fourier(1)
    p = np.full(N, y)
    assert field_eval(p, H, y) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        field_eval(p, H, y, topology="open")
    prm = ModelParams(N, y, BUMP)
    q = sample_equilibrium(prm, rng, 4)
    tr = evolve(q, 0.01, prm, IntegratorConfig(dt_macro=1e-4),
                {"Y1": lambda t, s: field_eval(s, TestFunction.constant(), y)}, sample_every=1e-3)
    want = (2 * 0.5 * np.sum(q * q, axis=1) - N * y * y) / np.sqrt(N)
    assert np.allclose(tr.values["Y1"], want[None, :], rtol=0, atol=1e-11)


@pytest.mark.parametrize("y", [1.0, 2.0])
def test_static_variance_from_equilibrium_samples(y):
    N = 32
    prm = ModelParams(N, y, constant())
    p = sample_equilibrium(prm, np.random.default_rng(6), 10**5)
    modes = [TestFunction.fourier(n) for n in (1, 2, 3)]
    Y = np.stack([field_eval(p, H, y) for H in modes], 1)
    C = Y.T @ Y / Y.shape[0]
    for a, H in enumerate(modes):
        v = Y[:, a] ** 2
        assert abs(v.mean() - field_variance_prediction(H, N, y)) <= 3 * v.std() / np.sqrt(v.size)
        for b in range(a):
            c = Y[:, a] * Y[:, b]
            assert abs(C[a, b]) <= 4 * c.std() / np.sqrt(c.size)


# --- OU prediction --------------------------------------------------------------------

def test_ou_prediction_examples():
    H1 = TestFunction.fourier(1)
    assert ou_covariance_predict(H1, H1, 0.0, 1.3, 1.0) == pytest.approx(2 * 1.3**4)
    assert ou_covariance_predict(H1, TestFunction.fourier(2), 0.3, 1.0, 1.0) == 0.0
    lag = 1 / (2 * np.pi) ** 2
    assert ou_covariance_predict(H1, H1, lag, 1.0, 1.0) == pytest.approx(2 * np.exp(-1))
    with pytest.raises(ValueError):
        ou_covariance_predict(H1, H1, -0.1, 1.0, 1.0)


@given(st.integers(1, 4), st.floats(0.0, 0.05), st.floats(0.5, 2.0))
def test_ou_heat_kernel_matches_fourier_shortcut(n, lag, a_hat):
    H = TestFunction.fourier(n, 0.3)
    # tabulate on the transform grid so no interpolation error enters
    u = np.arange(1024) / 1024
    T = TestFunction.tabulated(H(u), H.deriv(u))
    assert ou_covariance_predict(T, T, lag, 1.1, a_hat) == pytest.approx(
        ou_covariance_predict(H, H, lag, 1.1, a_hat), rel=1e-9, abs=1e-12)


def test_empirical_covariance_needs_replicas():
    with pytest.raises(ValueError):
        empirical_time_covariance(np.ones((4, 10)), np.ones((4, 10)), [0, 1])


def test_ou_decay_small_chain():
    N, y = 16, 1.0
    prm = ModelParams(N, y, constant())
    cfg = IntegratorConfig(dt_macro=0.05 / N**2, seed=12)
    tests = [TestFunction.fourier(1), TestFunction.fourier(2)]
    times, Y, seeds = field_series(prm, cfg, 64, 1200, 4, tests)
    dt = times[1] - times[0]
    lags = np.arange(0, 80)
    c11 = empirical_time_covariance(Y[:, :, 0], Y[:, :, 0], lags, dt, seeds)
    c12 = empirical_time_covariance(Y[:, :, 0], Y[:, :, 1], lags[:5], dt)
    c21 = empirical_time_covariance(Y[:, :, 1], Y[:, :, 0], lags[:5], dt)
    assert abs(c11.estimates[0] - 2.0) <= 3 * c11.stderr[0]
    assert np.all(np.abs(c12.estimates - c21.estimates)
                  <= 4 * np.hypot(c12.stderr, c21.stderr))
    fit = fit_ou_decay(c11, max_lag=0.05)
    # the lattice rate N^2 4 sin^2(pi/N) is within 2% of (2 pi)^2 at N = 16
    assert fit.rate == pytest.approx((2 * np.pi) ** 2, rel=0.15)


# --- translates and generator ---------------------------------------------------------

@given(polynomials(sites=3, max_exp=3, max_terms=3))
def test_translates_kernel(f):
    p = np.random.default_rng(0).standard_normal((3, 11))
    got = translates(f, p)
    want = np.stack([[f(p[r], offset=x, periodic=True) for x in range(11)] for r in range(3)])
    assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("coupling", [constant(1.7), BUMP])
def test_generator_translates_match_apply_generator(coupling, rng):
    N = 10
    F = LF.var(0) ** 2 * LF.var(1) ** 2 + 0.4 * LF.var(0) ** 3 * LF.var(2)
    prm = ModelParams(N, 1.0, coupling)
    p = rng.standard_normal((5, N))
    got = GeneratorTranslates(F, coupling)(p)
    for x in (0, 3, 9):
        obs = Observable.from_polynomial(F.shift(x), N, periodic=True)
        assert np.allclose(got[:, x], apply_generator(obs, p, prm), atol=1e-12)


# --- Boltzmann-Gibbs residual -----------------------------------------------------------

def test_residual_vanishes_in_gradient_case():
    prm = ModelParams(16, 1.0, constant())
    cfg = IntegratorConfig(dt_macro=0.05 / 256, seed=2)
    ints = residual_integrals(prm, cfg, TestFunction.fourier(1), {"zero": LF()}, 0.01, 8,
                              stride=2, n_times=2)
    s = bg_residual(ints, "zero", 1.0)
    assert np.all(s.estimates <= 1e-24)
    # with the wrong coefficient the residual is strictly positive and quadratic
    r1 = ints.residual("zero", 1.2).mean()
    r2 = ints.residual("zero", 1.4).mean()
    assert r1 > 0 and r2 / r1 == pytest.approx(4.0, rel=1e-9)


def test_residual_requires_accelerated_torus():
    with pytest.raises(ValueError):
        residual_integrals(ModelParams(8, 1.0, BUMP, "open"), IntegratorConfig(), None, {},
                           0.1, 8)
    with pytest.raises(ValueError):
        residual_integrals(ModelParams(8, 1.0, BUMP), IntegratorConfig(accelerate=False), None,
                           {}, 0.1, 8)


def test_scan_and_paired_difference_arithmetic():
    g = np.random.default_rng(1)
    Z = g.standard_normal((50, 1))
    X0 = 1.1 * Z + 0.1 * g.standard_normal((50, 1))
    X1 = 1.1 * Z + 0.05 * g.standard_normal((50, 1))
    ints = ResidualIntegrals(np.array([1.0]), {"a": X0, "b": X1}, Z, [])
    scan = a_hat_scan(ints, "a", np.arange(0.5, 1.75, 0.05))
    exact = scan.meta["argmin_exact"]
    assert exact == pytest.approx(np.sum(X0 * Z) / np.sum(Z * Z))
    assert abs(scan.meta["argmin_grid"] - exact) <= 0.025 + 1e-12
    pc = paired_residual_difference(ints, "a", "b", 1.1)
    d = (X0 - 1.1 * Z) ** 2 - (X1 - 1.1 * Z) ** 2
    assert pc.difference == pytest.approx(d.mean())
    assert pc.stderr == pytest.approx(d.std(ddof=1) / np.sqrt(50))


# --- CLT observables -------------------------------------------------------------------

def test_clt_observables(rng):
    N = 3
    prm = ModelParams(2 * N + 1, 1.0, BUMP, "open")
    p = rng.standard_normal((4, 2 * N + 1))
    A = clt_observable("A", N, prm)(p)
    assert np.allclose(A, p[:, -1] ** 2 - p[:, 0] ** 2)
    B = clt_observable("B", N, prm)(p)
    assert np.allclose(B, currents(p, prm).sum(-1))
    F = LF.var(0) ** 2 * LF.var(1) ** 2
    H = clt_observable("H", N, prm, F=F)(p)
    obs = Observable.from_polynomial(_psi(F, N), 2 * N + 1, offset=N)
    assert np.allclose(H, apply_generator(obs, p, prm))
    combo = clt_observable("combo", N, prm, F=F, a_hat=1.1)(p)
    assert np.allclose(combo, B + 1.1 * A - H)
    with pytest.raises(ValueError):
        clt_observable("H", N, prm)
    with pytest.raises(ValueError):
        clt_observable("combo", N, prm, F=F)


def test_clt_time_variance_small_chain():
    # B = L(sum x p_x^2) is a pure martingale increment at long times: compare with the
    # exact Dirichlet-form value at N = 2
    N = 2
    exact = gradient_type_variance("BB", N, 1.0, constant()) / (2 * N)
    out = clt_time_variance(["B"], N, 1.0, constant(), 40.0, 256, windows=2, dt_micro=0.02,
                            stride=5, seed=3)
    s = out["B"]
    m, se = s.meta["per_2N"], s.meta["per_2N_stderr"]
    assert abs(m - exact) <= 4 * se + 0.05 * exact
    assert s.replicas == 512 and s.grid.size == 3
