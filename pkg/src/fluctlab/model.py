"""Model state, generator, currents and equilibrium expectations.

The chain carries velocities ``p[0..n-1]``.  On a periodic chain bond ``x``
joins sites ``x`` and ``x+1 mod n``; on an open chain bonds run
``0..n-2``.  The generator is

    L f = 1/2 sum_x X_{x,x+1}[a(p_x, p_{x+1}) X_{x,x+1} f],
    X_{x,x+1} = p_{x+1} d/dp_x - p_x d/dp_{x+1},

and the product Gaussians nu_y (variance y^2 per site) are reversible.
"""

from dataclasses import dataclass
from typing import Callable, Optional
from weakref import WeakKeyDictionary

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .coupling import CouplingSpec
from .polynomial import LocalFunction, poly_hessian_callables

TOPOLOGIES = ("periodic", "open")

# tensor Gauss-Hermite grids above this many nodes are refused
MAX_QUADRATURE_POINTS = 12**6


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Chain length, equilibrium scale, coupling and boundary condition."""

    n_sites: int
    y: float
    coupling: CouplingSpec
    topology: str = "periodic"

    def __post_init__(self):
        if int(self.n_sites) != self.n_sites or self.n_sites < 3:
            raise ValueError(f"n_sites must be an integer >= 3, got {self.n_sites}")
        if not self.y > 0:
            raise ValueError(f"y must be positive, got {self.y}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}")

    @property
    def periodic(self):
        return self.topology == "periodic"

    @property
    def n_bonds(self):
        return self.n_sites if self.periodic else self.n_sites - 1

    def bond_sites(self, x):
        if not 0 <= x < self.n_bonds:
            raise IndexError(f"bond {x} invalid for {self.topology} chain of {self.n_sites} sites")
        return x, (x + 1) % self.n_sites

    def to_config(self):
        return {"n_sites": self.n_sites, "y": self.y, "topology": self.topology,
                "coupling": self.coupling.to_config()}

    @classmethod
    def from_config(cls, cfg):
        return cls(int(cfg["n_sites"]), float(cfg["y"]),
                   CouplingSpec.from_config(cfg["coupling"]), cfg.get("topology", "periodic"))


@dataclass(frozen=True, eq=False)
class Observable:
    """A function of the configuration with analytic derivatives.

    ``grad(p)`` returns ``p.shape`` and ``hess(p)`` returns ``p.shape + (n,)``.
    ``sites`` lists the coordinates the function depends on (``None`` means
    all of them); quadrature only integrates over those.
    """

    value: Callable
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None
    sites: Optional[tuple] = None
    poly: Optional[LocalFunction] = None
    periodic: bool = False

    def __call__(self, p):
        return self.value(p)

    @classmethod
    def from_polynomial(cls, f, n_sites, offset=0, periodic=False):
        """Wrap a :class:`LocalFunction`; lattice site ``s`` sits at index ``s + offset``."""
        if not isinstance(f, LocalFunction):
            f = LocalFunction.coerce(f)
        v, g, h = poly_hessian_callables(f, n_sites, offset, periodic)
        idx = tuple(sorted({(s + offset) % n_sites if periodic else s + offset for s in f.sites}))
        shifted = f.shift(offset)
        if periodic:
            shifted = _wrap(shifted, n_sites)
        return cls(v, g, h, sites=idx, poly=shifted, periodic=periodic)

    @classmethod
    def energy(cls, n_sites):
        """The total energy 1/2 sum p_x^2."""
        return cls(total_energy, lambda p: np.array(p, dtype=float),
                   lambda p: np.broadcast_to(np.eye(n_sites), np.shape(p) + (n_sites,)).copy())


def total_energy(p):
    """E = 1/2 sum_x p_x^2 (over the last axis)."""
    p = np.asarray(p, dtype=float)
    return 0.5 * np.sum(p * p, axis=-1)


def bond_angular_derivative(coupling, r, s):
    """X_{x,x+1}[a(p_x, p_{x+1})] = p_{x+1} a_r - p_x a_s."""
    return s * coupling.d_r(r, s) - r * coupling.d_s(r, s)


def current(p, x, params):
    """Energy current W_{x,x+1} across bond ``x``.

    W = a (p_x^2 - p_{x+1}^2) - X_{x,x+1}[a] p_x p_{x+1}.
    """
    i, j = params.bond_sites(x)
    p = np.asarray(p, dtype=float)
    r, s = p[..., i], p[..., j]
    a = params.coupling(r, s)
    return a * (r * r - s * s) - bond_angular_derivative(params.coupling, r, s) * r * s


def currents(p, params):
    """All bond currents, shape ``p.shape[:-1] + (n_bonds,)``."""
    p = np.asarray(p, dtype=float)
    r = p[..., :params.n_bonds]
    s = np.roll(p, -1, axis=-1)[..., :params.n_bonds]
    a = params.coupling(r, s)
    return a * (r * r - s * s) - bond_angular_derivative(params.coupling, r, s) * r * s


def apply_generator(f, p, params, bonds=None):
    """(L f)(p) by the exact per-bond expansion 1/2 [a X^2 f + X(a) X f].

    ``bonds`` restricts the sum (used for single-bond weak-order checks).
    """
    if f.grad is None or f.hess is None:
        raise ValueError("apply_generator needs an observable with first and second derivatives")
    p = np.asarray(p, dtype=float)
    g = f.grad(p)
    h = f.hess(p)
    out = np.zeros(p.shape[:-1])
    for x in (range(params.n_bonds) if bonds is None else bonds):
        i, j = params.bond_sites(x)
        r, s = p[..., i], p[..., j]
        xf = s * g[..., i] - r * g[..., j]
        x2f = (s * s * h[..., i, i] - 2 * r * s * h[..., i, j] + r * r * h[..., j, j]
               - r * g[..., i] - s * g[..., j])
        out = out + 0.5 * (params.coupling(r, s) * x2f
                           + bond_angular_derivative(params.coupling, r, s) * xf)
    return out


def sample_equilibrium(params, rng, size=None):
    """Draw from nu_y: i.i.d. N(0, y^2) per site."""
    shape = (params.n_sites,) if size is None else tuple(np.atleast_1d(size)) + (params.n_sites,)
    return params.y * rng.standard_normal(shape)


def _gh_rule(order, y):
    x, w = hermegauss(order)
    return y * x, w / np.sqrt(2 * np.pi)


def gaussian_expectation(g, y, order=12, max_points=MAX_QUADRATURE_POINTS, n_sites=None):
    """E_{nu_y}[g] by tensor Gauss-Hermite quadrature over ``g.sites``.

    A :class:`LocalFunction` is integrated exactly from moments instead.
    Exact for polynomials of degree <= 2*order - 1 in each variable.
    """
    if isinstance(g, LocalFunction):
        return g.gaussian_expectation(y)
    sites = g.sites
    if sites is None:
        raise ValueError("observable must declare the sites it depends on")
    m = len(sites)
    if order**m > max_points:
        raise ValueError(f"quadrature grid {order}^{m} exceeds budget of {max_points} points; "
                         "factorize the integrand or use Monte Carlo")
    n = n_sites if n_sites is not None else (max(sites) + 1 if sites else 1)
    x, w = _gh_rule(order, y)
    if m == 0:
        return float(np.asarray(g.value(np.zeros(n))))
    total = 0.0
    npts = order**m
    chunk = 200_000
    for start in range(0, npts, chunk):
        flat = np.arange(start, min(start + chunk, npts))
        digits = np.array(np.unravel_index(flat, (order,) * m))
        p = np.zeros((flat.size, n))
        weight = np.ones(flat.size)
        for k, s in enumerate(sites):
            p[:, s] = x[digits[k]]
            weight *= w[digits[k]]
        total += float(np.sum(weight * np.asarray(g.value(p))))
    return total


_moment_cache = WeakKeyDictionary()


def coupling_moments(coupling, y, max_degree, order=64):
    """Table M[e0, e1] = E_{nu_y}[a(p0, p1) p0^e0 p1^e1] for e0, e1 <= max_degree.

    Constant couplings use exact Gaussian moments; otherwise a 2-D
    Gauss-Hermite rule of the given order (exact up to the smoothness of a).
    """
    key = (float(y), int(max_degree), int(order))
    per = _moment_cache.setdefault(coupling, {})
    if key in per:
        return per[key]
    e = np.arange(max_degree + 1)
    if coupling.is_constant:
        from .polynomial import gaussian_moment
        mom = np.array([gaussian_moment(k, y) for k in e])
        table = coupling.params["a0"] * np.outer(mom, mom)
    else:
        x, w = _gh_rule(order, y)
        a = coupling(x[:, None], x[None, :])
        v = w[:, None] * x[:, None] ** e[None, :]
        table = v.T @ a @ v
        odd = (e[:, None] % 2) + (e[None, :] % 2)
        # both built-ins are even in each slot; keep exact zeros there
        if coupling.kind == "gaussian_bump":
            table[odd > 0] = 0.0
    per[key] = table
    return table


def expect_with_coupling(f, coupling, y, bond=(0, 1), order=64):
    """E_{nu_y}[a(p_i, p_j) f(p)] for a polynomial ``f``.

    Sites other than the bond are integrated exactly; the bond pair uses
    :func:`coupling_moments`.
    """
    i, j = bond
    red = f.integrate_out((i, j), y)
    if not red.terms:
        return 0.0
    deg = max(dict(m).get(i, 0) for m in red.terms) if red.terms else 0
    deg = max(deg, max(dict(m).get(j, 0) for m in red.terms))
    table = coupling_moments(coupling, y, deg, order)
    total = 0.0
    for m, c in red.terms.items():
        d = dict(m)
        total += c * table[d.get(i, 0), d.get(j, 0)]
    return float(total)


def dirichlet_form(f, params, measure="gaussian", samples=100_000, rng=None, bonds=None,
                   return_stderr=False):
    """D(f) = 1/2 sum_x E[a(p_x, p_{x+1}) (X_{x,x+1} f)^2].

    ``measure`` is ``"gaussian"`` (nu_y) or ``"microcanonical"`` (uniform on
    the sphere sum p^2 = n y^2).  Polynomial observables under nu_y are
    evaluated exactly; everything else by Monte Carlo with ``samples`` draws.
    """
    bonds = range(params.n_bonds) if bonds is None else bonds
    if measure == "gaussian" and f.poly is not None:
        val = 0.0
        for x in bonds:
            i, j = params.bond_sites(x)
            xf = f.poly.rotation(i, j)
            val += 0.5 * expect_with_coupling(xf * xf, params.coupling, params.y, bond=(i, j))
        return (val, 0.0) if return_stderr else val
    if f.grad is None:
        raise ValueError("dirichlet_form needs the gradient of f")
    if rng is None:
        raise ValueError("Monte Carlo Dirichlet form needs an rng")
    if measure == "gaussian":
        p = sample_equilibrium(params, rng, samples)
    elif measure == "microcanonical":
        from .spheres import sample_sphere, SphereSpec
        spec = SphereSpec(params.n_sites, params.y * np.sqrt(params.n_sites))
        p = sample_sphere(spec, rng, samples)
    else:
        raise ValueError(f"unknown measure {measure!r}")
    g = f.grad(p)
    integrand = np.zeros(samples)
    for x in bonds:
        i, j = params.bond_sites(x)
        r, s = p[:, i], p[:, j]
        xf = s * g[:, i] - r * g[:, j]
        integrand += 0.5 * params.coupling(r, s) * xf * xf
    val = float(integrand.mean())
    if return_stderr:
        return val, float(integrand.std(ddof=1) / np.sqrt(samples))
    return val


def _wrap(f, n):
    """Reduce site labels mod n (polynomial on a periodic chain)."""
    out = {}
    for m, c in f.terms.items():
        d = {}
        for s, e in m:
            d[s % n] = d.get(s % n, 0) + e
        key = tuple(sorted(d.items()))
        out[key] = out.get(key, 0.0) + c
    return LocalFunction(out)
