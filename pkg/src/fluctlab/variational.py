"""Diffusion coefficient by Ritz minimization over local polynomial functions.

For a local function F write F~ = sum_j tau^j F (formal) and
xi_F = X_{0,1} F~, which is a genuine local polynomial.  The diffusion
coefficient is

    a_hat(y) = y^-4 inf_F E_{nu_y}[a(p0, p1) (p0 p1 + xi_F)^2],

and restricting F to the span of a finite basis turns this into a
quadratic minimization solved from the normal equations.
"""

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack
from scipy.special import roots_jacobi

from .model import expect_with_coupling
from .polynomial import LocalFunction
from .spheres import SphereSpec, log_sphere_average

P0P1 = LocalFunction.var(0) * LocalFunction.var(1)


def cyclic_gradient(F):
    """xi = X_{0,1}(sum_j tau^j F), summing the translates that touch sites 0, 1."""
    shifts = sorted({d - s for s in F.sites for d in (0, 1)})
    xi = LocalFunction()
    for j in shifts:
        xi = xi + F.shift(j).rotation(0, 1)
    return xi


def quadratic_form(y, F, coupling, xi=None):
    """a(y, F) = E_{nu_y}[a(p0, p1) (p0 p1 + xi_F)^2]."""
    if xi is None:
        xi = cyclic_gradient(F) if F is not None else LocalFunction()
    g = P0P1 + xi
    return expect_with_coupling(g * g, coupling, y)


def monomial_basis(degree, k, parity="even", min_degree=1):
    """Monomials on sites -k..k of total degree in [min_degree, degree], one per translation class.

    ``parity="even"`` keeps monomials with every exponent even: when the
    coupling is even in each argument only these produce cyclic gradients
    correlated with p0 p1.  ``parity="all"`` keeps everything; ``"odd"``
    keeps odd total degree.  Monomials whose cyclic gradient vanishes
    (functions of the local energy alone, e.g. p_0^2) are dropped.
    """
    if parity not in ("even", "all", "odd"):
        raise ValueError("parity must be 'even', 'odd' or 'all'")
    sites = range(-k, k + 1)
    seen = set()
    out = []
    for d in range(min_degree, degree + 1):
        for combo in itertools.combinations_with_replacement(sites, d):
            exps = {}
            for s in combo:
                exps[s] = exps.get(s, 0) + 1
            if parity == "even" and any(e % 2 for e in exps.values()):
                continue
            if parity == "odd" and d % 2 == 0:
                continue
            F = LocalFunction.monomial(exps).canonical()
            key = F.key()
            if key in seen:
                continue
            seen.add(key)
            if cyclic_gradient(F).is_zero(1e-14):
                continue
            out.append(F.shift(-k))
    return out


@dataclass
class DiffusionResult:
    """Outcome of the Ritz minimization.

    ``coefficients[i]`` multiplies ``basis[i]`` in the minimizer
    F* = sum c_i F_i of E[a (p0 p1 + xi_F)^2].  The dissipative term of the
    current decomposition uses 2 F* (see :meth:`current_function`).
    """

    y: float
    a_hat: float
    form_value: float
    coefficients: np.ndarray
    basis: list
    gram_condition: float
    rank: int
    dropped: list = field(default_factory=list)
    gradient_case_value: float = None

    def minimizer(self):
        F = LocalFunction()
        for c, f in zip(self.coefficients, self.basis):
            if c != 0:
                F = F + c * f
        return F

    def current_function(self):
        """F entering W - a_hat grad(p^2) - L tau^x F; equals twice the minimizer."""
        return 2.0 * self.minimizer()

    def to_record(self, coupling=None, basis_spec=None):
        rec = {"y": self.y, "a_hat": self.a_hat, "form_value": self.form_value,
               "coefficients": [float(c) for c in self.coefficients],
               "basis": [repr(f) for f in self.basis],
               "gram_condition": self.gram_condition, "rank": self.rank,
               "dropped": list(self.dropped),
               "current_function_scale": 2.0}
        if coupling is not None:
            rec["coupling"] = coupling.to_config()
        if basis_spec is not None:
            rec["basis_spec"] = basis_spec
        return rec


def _pivoted_solve(G, b, tol):
    """Solve G c = b on the numerically independent columns of a PSD matrix."""
    n = G.shape[0]
    d = np.sqrt(np.clip(np.diag(G), 0, None))
    keep0 = d > 0
    scale = np.where(keep0, 1 / np.where(keep0, d, 1), 0.0)
    Gs = G * scale[:, None] * scale[None, :]
    c = np.zeros(n)
    if not np.any(keep0):
        return c, 0, list(range(n)), np.inf
    idx0 = np.flatnonzero(keep0)
    A = np.array(Gs[np.ix_(idx0, idx0)], order="F")
    L, piv, rank, info = lapack.dpstrf(A, lower=1, tol=tol)
    piv = piv[:rank] - 1
    sel = idx0[piv]
    Gk = Gs[np.ix_(sel, sel)]
    ck = np.linalg.solve(Gk, (b * scale)[sel])
    c[sel] = ck * scale[sel]
    dropped = sorted(set(range(n)) - set(sel.tolist()))
    cond = float(np.linalg.cond(Gk)) if rank else np.inf
    return c, int(rank), dropped, cond


def gram_system(y, basis, coupling):
    """Gram matrix E[a xi_i xi_j], load E[a p0 p1 xi_i] and E[a (p0 p1)^2]."""
    xis = [cyclic_gradient(F) for F in basis]
    m = len(xis)
    G = np.zeros((m, m))
    b = np.zeros(m)
    for i in range(m):
        b[i] = expect_with_coupling(P0P1 * xis[i], coupling, y)
        for j in range(i, m):
            G[i, j] = G[j, i] = expect_with_coupling(xis[i] * xis[j], coupling, y)
    c0 = expect_with_coupling(P0P1 * P0P1, coupling, y)
    return G, b, c0, xis


def minimize_diffusion_coefficient(y, basis, coupling, rank_tol=1e-12):
    """Minimize E[a (p0 p1 + sum c_i xi_i)^2] over the span of ``basis``.

    Returns a :class:`DiffusionResult` with a_hat = y^-4 * min.  Columns
    that are numerically dependent (relative pivot below ``rank_tol``) are
    dropped with a warning.
    """
    basis = list(basis)
    if not basis:
        c0 = quadratic_form(y, None, coupling)
        return DiffusionResult(y, c0 / y**4, c0, np.zeros(0), [], 1.0, 0, [], c0)
    G, b, c0, _ = gram_system(y, basis, coupling)
    c, rank, dropped, cond = _pivoted_solve(G, -b, rank_tol)
    if dropped:
        warnings.warn(f"dropped {len(dropped)} dependent basis functions: {dropped}",
                      RuntimeWarning, stacklevel=2)
    value = float(c0 + 2 * b @ c + c @ G @ c)
    if value < 0:
        raise ArithmeticError(f"negative quadratic form {value}; quadrature is inconsistent")
    return DiffusionResult(y, value / y**4, value, c, basis, cond, rank, dropped, c0)


@dataclass
class HyReport:
    """Pass/fail per membership condition, with a witness for each failure."""

    results: dict

    @property
    def all_pass(self):
        return all(ok for ok, _ in self.results.values())

    def __getitem__(self, k):
        return self.results[k]


def check_Hy_conditions(xi, y, tol=1e-10, window=None):
    """Check the four conditions characterizing closed cyclic gradients.

    i)   E[xi] = 0
    ii)  E[p0 p1 xi] = 0
    iii) X_{i,i+1}(tau^j xi) = X_{j,j+1}(tau^i xi) for disjoint bonds
    iv)  p_{i+1}[X_{i+1,i+2}(tau^i xi) - X_{i,i+1}(tau^{i+1} xi)]
             = p_{i+2} tau^i xi + p_i tau^{i+1} xi

    The sign in iv) is the one forced by [X_{i+1,i+2}, X_{i,i+1}] = X_{i,i+2}.

    i) and ii) use exact Gaussian moments; iii) and iv) are checked as
    polynomial identities for all indices in ``window`` (default: a range
    covering every pair whose terms can interact).
    """
    scale = max(1.0, xi.max_abs_coef()) * max(1.0, y) ** (xi.degree + 2)
    res = {}
    m1 = xi.gaussian_expectation(y)
    res["i"] = (abs(m1) <= tol * scale, None if abs(m1) <= tol * scale else m1)
    m2 = (P0P1 * xi).gaussian_expectation(y)
    res["ii"] = (abs(m2) <= tol * scale, None if abs(m2) <= tol * scale else m2)
    sites = xi.sites or (0,)
    lo, hi = min(sites), max(sites)
    span = hi - lo + 2
    if window is None:
        window = range(-span - 2, span + 3)
    window = list(window)
    shifted = {j: xi.shift(j) for j in window + [w + 1 for w in window]}
    witness = None
    for i in window:
        for j in window:
            if abs(i - j) < 2:
                continue
            d = shifted[j].bond(i) - shifted[i].bond(j)
            if not d.is_zero(tol * scale):
                witness = (i, j)
                break
        if witness:
            break
    res["iii"] = (witness is None, witness)
    witness = None
    for i in window:
        lhs = (shifted[i].bond(i + 1) - shifted[i + 1].bond(i)).times_var(i + 1)
        rhs = shifted[i].times_var(i + 2) + shifted[i + 1].times_var(i)
        if not (lhs - rhs).is_zero(tol * scale):
            witness = i
            break
    res["iv"] = (witness is None, witness)
    return HyReport(res)


# --- finite-N CLT variances of gradient-type observables --------------------

def _marginal_rule(n, r, n_radial=48, n_angle=64):
    """Nodes/weights for the (p0, p1) marginal of the uniform law on S^{n-1}(r).

    The marginal density is proportional to (1 - rho^2/r^2)^{(n-4)/2} on the
    disk; Gauss-Jacobi in u = rho^2/r^2 times a uniform angle rule.
    """
    beta = (n - 4) / 2.0
    t, w = roots_jacobi(n_radial, beta, 0.0)
    u = 0.5 * (1 + t)
    w = w / w.sum()
    phi = 2 * np.pi * np.arange(n_angle) / n_angle
    rho = r * np.sqrt(u)
    x0 = (rho[:, None] * np.cos(phi)[None, :]).ravel()
    x1 = (rho[:, None] * np.sin(phi)[None, :]).ravel()
    ww = (w[:, None] * np.full(n_angle, 1.0 / n_angle)[None, :]).ravel()
    return x0, x1, ww


def sphere_expect_with_coupling(f, coupling, spec, bond):
    """E_sigma[a(p_i, p_j) f] over S^{n-1}(r) for a polynomial ``f`` (coordinates 0..n-1).

    The other n-2 coordinates are integrated exactly (uniform on the
    sphere of radius sqrt(r^2 - p_i^2 - p_j^2)); the bond pair uses the
    marginal quadrature.  Constant couplings reduce to closed forms.
    """
    from .spheres import sphere_expectation
    if coupling.is_constant:
        return coupling.params["a0"] * sphere_expectation(f, spec)
    if spec.n < 4:
        raise ValueError("bond marginal quadrature needs n >= 4")
    i, j = bond
    grouped = {}
    for m, c in f.terms.items():
        if any(e % 2 for _, e in m):
            continue
        d = dict(m)
        e0, e1 = d.pop(i, 0), d.pop(j, 0)
        rest = [e // 2 for e in d.values()]
        k = float(np.exp(log_sphere_average(rest, spec.n - 2, 1.0))) if rest else 1.0
        key = (e0, e1, sum(rest))
        grouped[key] = grouped.get(key, 0.0) + c * k
    if not grouped:
        return 0.0
    x0, x1, w = _marginal_rule(spec.n, spec.r)
    aw = w * coupling(x0, x1)
    rem = spec.r**2 - x0 * x0 - x1 * x1
    return float(sum(c * np.sum(aw * x0**e0 * x1**e1 * rem**A)
                     for (e0, e1, A), c in grouped.items()))


def _psi(F, N):
    """sum of translates tau^x F fully inside -N..N, in lattice labels."""
    sites = F.sites
    out = LocalFunction()
    if not sites:
        return out
    lo, hi = min(sites), max(sites)
    for x in range(-N - lo, N - hi + 1):
        out = out + F.shift(x)
    return out


def _dirichlet_bilinear(f, g, coupling, N, y):
    """D(f, g) = 1/2 sum_bonds E_mu[a X_b f X_b g] on the sphere of 2N+1 sites."""
    spec = SphereSpec.for_model(2 * N + 1, y)
    tot = 0.0
    for x in range(-N, N):
        xf = f.bond(x).shift(N)
        xg = g.bond(x).shift(N) if g is not f else xf
        tot += 0.5 * sphere_expect_with_coupling(xf * xg, coupling, spec, (x + N, x + N + 1))
    return tot


def _U(N):
    return sum((x * LocalFunction.var(x) ** 2 for x in range(-N, N + 1)), LocalFunction())


def _A(N):
    return LocalFunction.var(N) ** 2 - LocalFunction.var(-N) ** 2


def gradient_type_variance(target, N, y, coupling, F=None):
    """Exact finite-N CLT (co)variances on the sphere of 2N+1 sites (no simulation).

    ``target`` is one of ``"BB"``, ``"HH"``, ``"BH"``, ``"AB"``, ``"AH"``.
    Uses sigma^2(L u, L v) = 2 D(u, v), sigma^2(A, L v) = -2 <A, v>, with
    B = L(sum_x x p_x^2) and H^F = L(sum_x tau^x F).
    """
    from .spheres import sphere_expectation
    target = target.upper()
    if target not in ("BB", "HH", "BH", "AB", "AH"):
        raise ValueError(f"unsupported target {target!r}")
    if "H" in target and F is None:
        raise ValueError(f"target {target} needs a local function F")
    spec = SphereSpec.for_model(2 * N + 1, y)
    U = _U(N)
    if target == "BB":
        return 2 * _dirichlet_bilinear(U, U, coupling, N, y)
    psi = _psi(F, N) if F is not None else None
    if target == "HH":
        if not psi.terms:
            return 0.0
        return 2 * _dirichlet_bilinear(psi, psi, coupling, N, y)
    if target == "BH":
        return 2 * _dirichlet_bilinear(U, psi, coupling, N, y)
    other = U if target == "AB" else psi
    A = _A(N)
    cov = sphere_expectation((A * other).shift(N), spec) - \
        sphere_expectation(A.shift(N), spec) * sphere_expectation(other.shift(N), spec)
    return -2 * cov
