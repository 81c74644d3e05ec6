"""Sparse polynomial local functions on the lattice Z.

A :class:`LocalFunction` is a finite sum of monomials in the velocities
``p_s``, stored as ``{((site, power), ...): coefficient}`` with sites in
increasing order.  Everything the variational machinery needs (products,
partial derivatives, the rotation fields X_{i,j}, shifts, exact Gaussian
moments) is closed-form on this representation.
"""

from collections import defaultdict
from math import prod

import numpy as np


def gaussian_moment(m, y=1.0):
    """E[p^m] for p ~ N(0, y^2)."""
    if m % 2:
        return 0.0
    out = 1.0
    for k in range(m - 1, 0, -2):
        out *= k
    return out * y**m


def _merge(a, b):
    if not a:
        return b
    if not b:
        return a
    d = dict(a)
    for s, e in b:
        d[s] = d.get(s, 0) + e
    return tuple(sorted(d.items()))


class LocalFunction:
    """Polynomial in finitely many lattice velocities."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        clean = {}
        if terms:
            for mono, c in terms.items():
                if c != 0:
                    mono = tuple(sorted((int(s), int(e)) for s, e in mono if e))
                    clean[mono] = clean.get(mono, 0.0) + float(c)
            clean = {m: c for m, c in clean.items() if c != 0}
        self.terms = clean

    # construction -------------------------------------------------------
    @classmethod
    def constant(cls, c):
        return cls({(): c})

    @classmethod
    def var(cls, site):
        return cls({((site, 1),): 1.0})

    @classmethod
    def monomial(cls, exponents, coef=1.0):
        """Monomial from ``{site: power}``."""
        return cls({tuple(sorted(exponents.items())): coef})

    @classmethod
    def coerce(cls, other):
        if isinstance(other, LocalFunction):
            return other
        return cls.constant(float(other))

    # algebra ------------------------------------------------------------
    def __add__(self, other):
        other = LocalFunction.coerce(other)
        d = defaultdict(float, self.terms)
        for m, c in other.terms.items():
            d[m] += c
        return LocalFunction(d)

    __radd__ = __add__

    def __neg__(self):
        return LocalFunction({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-LocalFunction.coerce(other))

    def __rsub__(self, other):
        return LocalFunction.coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, LocalFunction):
            c = float(other)
            return LocalFunction({m: c * v for m, v in self.terms.items()})
        d = defaultdict(float)
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                d[_merge(m1, m2)] += c1 * c2
        return LocalFunction(d)

    __rmul__ = __mul__

    def __pow__(self, k):
        out = LocalFunction.constant(1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def __repr__(self):
        if not self.terms:
            return "LocalFunction(0)"
        parts = []
        for m, c in sorted(self.terms.items()):
            mono = "*".join(f"p[{s}]" + (f"^{e}" if e > 1 else "") for s, e in m) or "1"
            parts.append(f"{c:+.6g}*{mono}")
        return "LocalFunction(" + " ".join(parts) + ")"

    def __len__(self):
        return len(self.terms)

    # calculus -----------------------------------------------------------
    def diff(self, site):
        d = defaultdict(float)
        for m, c in self.terms.items():
            for k, (s, e) in enumerate(m):
                if s == site:
                    new = m[:k] + (((s, e - 1),) if e > 1 else ()) + m[k + 1:]
                    d[new] += c * e
                    break
        return LocalFunction(d)

    def times_var(self, site, coef=1.0):
        d = defaultdict(float)
        for m, c in self.terms.items():
            d[_merge(m, ((site, 1),))] += coef * c
        return LocalFunction(d)

    def rotation(self, i, j):
        """X_{i,j} f = p_j df/dp_i - p_i df/dp_j."""
        return self.diff(i).times_var(j) - self.diff(j).times_var(i)

    def bond(self, x):
        """X_{x,x+1} f."""
        return self.rotation(x, x + 1)

    def shift(self, j):
        """tau^j f, i.e. f evaluated on the configuration shifted by j."""
        return LocalFunction({tuple((s + j, e) for s, e in m): c for m, c in self.terms.items()})

    # inspection ---------------------------------------------------------
    @property
    def sites(self):
        return tuple(sorted({s for m in self.terms for s, _ in m}))

    @property
    def degree(self):
        return max((sum(e for _, e in m) for m in self.terms), default=0)

    def max_abs_coef(self):
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def is_zero(self, tol=1e-12):
        return self.max_abs_coef() <= tol

    def allclose(self, other, tol=1e-12):
        return (self - other).is_zero(tol)

    def canonical(self):
        """Shift so that the leftmost site is 0 (translation class key)."""
        s = self.sites
        return self.shift(-s[0]) if s else self

    def key(self, ndigits=12):
        return tuple(sorted((m, round(c, ndigits)) for m, c in self.terms.items()))

    def is_even_in_each_site(self):
        return all(e % 2 == 0 for m in self.terms for _, e in m)

    # evaluation ---------------------------------------------------------
    def __call__(self, p, offset=0, periodic=False):
        """Evaluate on ``p[..., n]`` with lattice site ``s`` at index ``s + offset``."""
        p = np.asarray(p, dtype=float)
        n = p.shape[-1]
        out = np.zeros(p.shape[:-1])
        for m, c in self.terms.items():
            term = np.full(p.shape[:-1], c)
            for s, e in m:
                idx = s + offset
                if periodic:
                    idx %= n
                elif not 0 <= idx < n:
                    raise IndexError(f"site {s} outside configuration of length {n}")
                term = term * p[..., idx] ** e
            out = out + term
        return out

    def gaussian_expectation(self, y=1.0):
        """Exact E_{nu_y}[f] from Gaussian moments."""
        return float(sum(c * prod(gaussian_moment(e, y) for _, e in m)
                         for m, c in self.terms.items()))

    def integrate_out(self, keep, y=1.0):
        """Conditional expectation given the sites in ``keep`` under nu_y."""
        keep = set(keep)
        d = defaultdict(float)
        for m, c in self.terms.items():
            kept = tuple((s, e) for s, e in m if s in keep)
            w = prod(gaussian_moment(e, y) for s, e in m if s not in keep)
            if w:
                d[kept] += c * w
        return LocalFunction(d)


def poly_hessian_callables(f, n, offset=0, periodic=False):
    """Value, gradient and Hessian callables of ``f`` on a chain of ``n`` sites."""
    sites = [s for s in f.sites]
    idx = [((s + offset) % n) if periodic else s + offset for s in sites]
    first = {s: f.diff(s) for s in sites}
    second = {(s, t): first[s].diff(t) for s in sites for t in sites}

    def grad(p):
        p = np.asarray(p, dtype=float)
        g = np.zeros(p.shape)
        for s, i in zip(sites, idx):
            g[..., i] += first[s](p, offset, periodic)
        return g

    def hess(p):
        p = np.asarray(p, dtype=float)
        h = np.zeros(p.shape + (n,))
        for s, i in zip(sites, idx):
            for t, j in zip(sites, idx):
                h[..., i, j] += second[(s, t)](p, offset, periodic)
        return h

    return (lambda p: f(p, offset, periodic)), grad, hess
