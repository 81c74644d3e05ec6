from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from fluctlab.coupling import CouplingSpec, constant, gaussian_bump
from fluctlab.model import (ModelParams, Observable, apply_generator, current, currents,
                            dirichlet_form, expect_with_coupling, gaussian_expectation,
                            sample_equilibrium, total_energy)
from fluctlab.polynomial import LocalFunction as LF

from conftest import polynomials

BUMP = gaussian_bump(0.5, 1.0)


# --- couplings ---------------------------------------------------------------

@pytest.mark.parametrize("c", [constant(0.7), gaussian_bump(0.5, 1.0), gaussian_bump(0.9, 0.4)])
def test_coupling_bounds_and_partials(c, rng):
    assert c.check_bounds(rng)
    r, s = 2 * rng.standard_normal((2, 200))
    h = 1e-6
    fd_r = (c(r + h, s) - c(r - h, s)) / (2 * h)
    fd_s = (c(r, s + h) - c(r, s - h)) / (2 * h)
    scale = np.maximum(np.abs(fd_r), 1e-3)
    assert np.all(np.abs(c.d_r(r, s) - fd_r) <= 1e-6 * scale + 1e-9)
    assert np.all(np.abs(c.d_s(r, s) - fd_s) <= 1e-6 * np.maximum(np.abs(fd_s), 1e-3) + 1e-9)
    assert np.all(np.abs(c.d_r(r, s)) <= c.derivative_bound + 1e-12)


def test_coupling_config_round_trip():
    c = CouplingSpec.from_config(BUMP.to_config())
    assert c.params == BUMP.params and c.kind == "gaussian_bump"
    with pytest.raises(ValueError):
        gaussian_bump(1.0)
    with pytest.raises(ValueError):
        constant(0.0)


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(2, 1.0, constant())
    with pytest.raises(ValueError):
        ModelParams(5, -1.0, constant())
    assert ModelParams(5, 1.0, constant(), "open").n_bonds == 4
    assert ModelParams(5, 1.0, constant()).n_bonds == 5
    with pytest.raises(IndexError):
        current(np.ones(5), 4, ModelParams(5, 1.0, constant(), "open"))


# --- energy and currents -------------------------------------------------------

def test_total_energy_examples():
    assert total_energy(np.zeros(3)) == 0.0
    assert total_energy(np.ones(3)) == 1.5
    p = np.random.default_rng(7).standard_normal(8)
    exact = sum(Fraction(float(v)) ** 2 for v in p) / 2
    assert total_energy(p) == pytest.approx(float(exact), rel=1e-15)


def test_current_gradient_case():
    prm = ModelParams(4, 1.0, constant())
    assert current(np.array([2.0, 1.0, 0, 0]), 0, prm) == 3.0
    assert current(np.array([1.5, 1.5, 0, 0]), 0, prm) == 0.0
    p = np.random.default_rng(1).standard_normal(4)
    prm2 = ModelParams(4, 1.0, constant(2.5))
    assert np.allclose(currents(p, prm2), 2.5 * (p**2 - np.roll(p, -1) ** 2))


def test_current_bump_matches_symbolic():
    r, s = sp.symbols("r s")
    a = 1 + sp.Rational(1, 2) * sp.exp(-(r**2 + s**2) / 2)
    Xa = s * sp.diff(a, r) - r * sp.diff(a, s)
    W = a * (r**2 - s**2) - Xa * r * s
    prm = ModelParams(4, 1.0, BUMP)
    for pr, ps in [(1.0, -1.0), (0.3, 1.7), (-2.0, 0.4)]:
        p = np.array([0.0, pr, ps, 0.0])
        want = float(W.subs({r: pr, s: ps}))
        assert current(p, 1, prm) == pytest.approx(want, rel=1e-13, abs=1e-14)


# --- generator ------------------------------------------------------------------

def test_generator_kills_energy_and_constants(rng):
    prm = ModelParams(9, 1.0, BUMP)
    p = 2 * rng.standard_normal((1000, 9))
    val = apply_generator(Observable.energy(9), p, prm)
    assert np.all(np.abs(val) <= 1e-10 * (1 + np.linalg.norm(p, axis=1) ** 4))
    one = Observable.from_polynomial(LF.constant(3.0), 9, periodic=True)
    assert np.all(apply_generator(one, p[:10], prm) == 0)


def test_generator_discrete_laplacian(rng):
    N = 6
    prm = ModelParams(N, 1.0, constant())
    f = Observable.from_polynomial(LF.var(0) ** 2, N, periodic=True)
    p = rng.standard_normal((20, N))
    want = p[:, 1] ** 2 + p[:, -1] ** 2 - 2 * p[:, 0] ** 2
    assert np.allclose(apply_generator(f, p, prm), want, atol=1e-13)


def test_generator_needs_second_derivatives():
    f = Observable(lambda p: p[..., 0])
    with pytest.raises(ValueError):
        apply_generator(f, np.ones(4), ModelParams(4, 1.0, constant()))


def _product_observable(f, g, prm):
    """f * L g as a quadrature-ready observable on the open chain."""
    G = Observable.from_polynomial(g, prm.n_sites)

    def value(p):
        return f(p) * apply_generator(G, p, prm)
    return Observable(value, sites=tuple(range(prm.n_sites)))


@given(polynomials(sites=3, max_exp=2, max_terms=3), polynomials(sites=3, max_exp=2, max_terms=3))
def test_generator_symmetric_and_stationary(f, g):
    prm = ModelParams(3, 1.0, BUMP, "open")
    fLg = gaussian_expectation(_product_observable(f, g, prm), 1.0, order=40, n_sites=3)
    gLf = gaussian_expectation(_product_observable(g, f, prm), 1.0, order=40, n_sites=3)
    Lf = gaussian_expectation(_product_observable(LF.constant(1.0), f, prm), 1.0, order=40,
                              n_sites=3)
    scale = 1.0 + abs(fLg)
    assert abs(fLg - gLf) <= 1e-8 * scale
    assert abs(Lf) <= 1e-8 * (1 + abs(f.gaussian_expectation(1.0)))


# --- equilibrium and quadrature -------------------------------------------------

def test_sample_equilibrium_moments():
    prm = ModelParams(3, 1.0, constant())
    x = sample_equilibrium(prm, np.random.default_rng(3), 10**6)[:, 0] ** 2
    assert abs(x.mean() - 1) <= 3 * x.std() / np.sqrt(x.size)
    prm2 = ModelParams(3, 2.0, constant())
    x4 = sample_equilibrium(prm2, np.random.default_rng(4), 10**6)[:, 0] ** 4
    assert abs(x4.mean() - 48) <= 4 * x4.std() / np.sqrt(x4.size)
    a = sample_equilibrium(prm, np.random.default_rng(5))
    b = sample_equilibrium(prm, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_gaussian_expectation_examples():
    assert gaussian_expectation(LF.var(0) ** 2 * LF.var(1) ** 2, 1.0) == pytest.approx(1.0)
    for y in (0.5, 1.3):
        assert gaussian_expectation(LF.var(0) ** 4, y) == pytest.approx(3 * y**4)
        obs = Observable(lambda p: p[..., 0] ** 4, sites=(0,))
        assert gaussian_expectation(obs, y) == pytest.approx(3 * y**4, rel=1e-12)


def test_gaussian_expectation_budget():
    obs = Observable(lambda p: p.sum(-1), sites=tuple(range(7)))
    with pytest.raises(ValueError):
        gaussian_expectation(obs, 1.0)


def test_bump_weighted_moment_matches_monte_carlo():
    obs = Observable(lambda p: BUMP(p[..., 0], p[..., 1]) * p[..., 0] ** 2 * p[..., 1] ** 2,
                     sites=(0, 1))
    quad = gaussian_expectation(obs, 1.0, order=40)
    ref = expect_with_coupling(LF.var(0) ** 2 * LF.var(1) ** 2, BUMP, 1.0)
    assert quad == pytest.approx(ref, rel=1e-10)
    # closed form: 1 + eps * (1/2)^{3/2}... per site E[p^2 e^{-p^2/2}] = 2^{-3/2}
    assert ref == pytest.approx(1 + 0.5 * 2 ** -3, rel=1e-12)
    g = np.random.default_rng(11)
    vals = []
    for _ in range(10):
        p = g.standard_normal((10**6, 2))
        vals.append(BUMP(p[:, 0], p[:, 1]) * p[:, 0] ** 2 * p[:, 1] ** 2)
    v = np.concatenate(vals)
    assert abs(v.mean() - ref) <= 4 * v.std() / np.sqrt(v.size)


# --- Dirichlet form -------------------------------------------------------------

def test_dirichlet_examples(rng):
    prm = ModelParams(3, 1.0, constant(), "open")
    one = Observable.from_polynomial(LF.constant(1.0), 3)
    assert dirichlet_form(one, prm) == 0.0
    f = Observable.from_polynomial(LF.var(0) * LF.var(1), 3)
    assert dirichlet_form(f, prm, bonds=[0]) == pytest.approx(2.0)
    mc = Observable(f.value, f.grad, f.hess, sites=(0, 1))
    m, se = dirichlet_form(mc, prm, rng=rng, samples=400_000, bonds=[0], return_stderr=True)
    assert abs(m - 2.0) <= 4 * se


def test_dirichlet_microcanonical(rng):
    N = 6
    prm = ModelParams(N, 1.0, BUMP)
    f = LF()
    for x in range(N):
        f = f + LF.var(x) ** 2
    obs = Observable.from_polynomial(f, N, periodic=True)
    # sum p^2 is conserved: every rotation kills it
    assert dirichlet_form(obs, prm, "microcanonical", rng=rng, samples=1000) == pytest.approx(0.0, abs=1e-20)
    g = Observable.from_polynomial(LF.var(0) ** 2, N, periodic=True)
    m, se = dirichlet_form(g, prm, "microcanonical", rng=rng, samples=200_000,
                           return_stderr=True)
    assert m > 0
    # independent estimate with fresh samples
    m2, se2 = dirichlet_form(g, prm, "microcanonical", rng=np.random.default_rng(99),
                             samples=200_000, return_stderr=True)
    assert abs(m - m2) <= 4 * np.hypot(se, se2)
