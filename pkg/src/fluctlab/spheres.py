"""Integration over energy spheres.

Closed-form sphere moments, Monte Carlo checks of the divergence theorem
and the spherical telescoping identity, and the finite-N gap between
microcanonical and Gaussian expectations.
"""

from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import gammaln

from .polynomial import LocalFunction


@dataclass(frozen=True)
class SphereSpec:
    """Sphere S^{n-1}(r) in R^n."""

    n: int
    r: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError("sphere dimension n must be an integer >= 2")
        if not self.r > 0:
            raise ValueError("radius must be positive")

    @classmethod
    def for_model(cls, n, y):
        """The sphere sum p^2 = n y^2 (mean kinetic energy y^2 per site)."""
        return cls(n, y * np.sqrt(n))

    @property
    def log_area(self):
        return np.log(2.0) + 0.5 * self.n * np.log(np.pi) + (self.n - 1) * np.log(self.r) \
            - gammaln(0.5 * self.n)

    @property
    def area(self):
        return float(np.exp(self.log_area))

    @property
    def ball_volume(self):
        return float(np.exp(0.5 * self.n * np.log(np.pi) + self.n * np.log(self.r)
                            - gammaln(0.5 * self.n + 1)))


@dataclass
class CheckResult:
    """Outcome of a two-sided Monte Carlo identity check."""

    check: str
    params: dict
    lhs: float
    rhs: float
    stderr: float
    discrepancy: float
    pointwise_gap: float = None
    threshold: float = 4.0

    @property
    def verdict(self):
        return "pass" if abs(self.discrepancy) <= self.threshold else "fail"

    def to_record(self):
        rec = asdict(self)
        rec["verdict"] = self.verdict
        return rec


def sample_sphere(spec, rng, size=None):
    """Uniform points on S^{n-1}(r): normalized Gaussian vectors times r."""
    shape = (spec.n,) if size is None else tuple(np.atleast_1d(size)) + (spec.n,)
    g = rng.standard_normal(shape)
    return spec.r * g / np.linalg.norm(g, axis=-1, keepdims=True)


def sample_ball(spec, rng, size):
    """Uniform points in the ball B^n(r): sphere point times r U^{1/n}."""
    s = sample_sphere(SphereSpec(spec.n, 1.0), rng, size)
    u = rng.random(np.atleast_1d(size))
    return spec.r * s * (u ** (1.0 / spec.n))[..., None]


def log_moment_surface(a, r):
    """log S_n(a, r) for exponents a (of x_k^2), n = len(a)."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("exponents must be nonnegative")
    n = a.size
    tot = a.sum()
    return (np.log(2.0) + np.sum(gammaln(a + 0.5)) - gammaln(tot + 0.5 * n)
            + (2 * tot + n - 1) * np.log(r))


def moment_closed_form(a, spec):
    """Surface integral of prod x_k^{2 a_k} over S^{n-1}(r), and its uniform average.

    Returns ``(surface_integral, normalized_expectation)``; log-Gamma
    arithmetic keeps large n finite.
    """
    a = np.zeros(spec.n) if a is None else np.asarray(a, dtype=float)
    if a.size != spec.n:
        raise ValueError("exponent vector length must equal the sphere dimension")
    ls = log_moment_surface(a, spec.r)
    l0 = log_moment_surface(np.zeros(spec.n), spec.r)
    with np.errstate(over="ignore"):
        surface = float(np.exp(ls))
        normalized = float(np.exp(ls - l0))
    if not (np.isfinite(surface) and np.isfinite(normalized)):
        raise OverflowError(f"sphere moment is not finite (log surface {ls:.6g})")
    return surface, normalized


def log_sphere_average(a, n, r):
    """log of E_sigma[prod x_k^{2 a_k}] with only the nonzero exponents listed."""
    a = np.asarray(a, dtype=float)
    tot = a.sum()
    return (np.sum(gammaln(a + 0.5)) - a.size * gammaln(0.5) + gammaln(0.5 * n)
            - gammaln(tot + 0.5 * n) + 2 * tot * np.log(r))


def sphere_expectation(f, spec):
    """Exact uniform average over S^{n-1}(r) of a polynomial; site s is coordinate s."""
    total = 0.0
    for m, c in f.terms.items():
        if any(e % 2 for _, e in m):
            continue
        if any(not 0 <= s < spec.n for s, _ in m):
            raise IndexError("polynomial site outside the sphere coordinates")
        total += c * np.exp(log_sphere_average([e // 2 for _, e in m], spec.n, spec.r))
    return float(total)


def pair_product_sum(N, y):
    """sum_{i=-N}^{N-1} E[p_i^2 p_{i+1}^2] on the sphere of 2N+1 sites, radius y sqrt(2N+1)."""
    spec = SphereSpec.for_model(2 * N + 1, y)
    a = np.zeros(spec.n)
    a[0] = a[1] = 1
    return 2 * N * moment_closed_form(a, spec)[1]


def pair_product_sum_formula(N, y):
    return 2 * N * (2 * N + 1) ** 2 / ((2 * N + 3) * (2 * N + 1)) * y**4


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def divergence_check(f, i, spec, samples, rng):
    """Compare r * int_B df/dp_i dp with int_S f s_i dsigma by Monte Carlo.

    ``f`` is an :class:`~fluctlab.model.Observable` with a gradient.
    Independent ball and sphere samples; discrepancy in combined standard
    errors.
    """
    ball = sample_ball(spec, rng, samples)
    sph = sample_sphere(spec, rng, samples)
    m1, s1 = _mean_se(f.grad(ball)[:, i])
    m2, s2 = _mean_se(np.asarray(f(sph)) * sph[:, i])
    lhs = spec.r * spec.ball_volume * m1
    rhs = spec.area * m2
    se = float(np.hypot(spec.r * spec.ball_volume * s1, spec.area * s2))
    disc = (lhs - rhs) / se if se > 0 else (0.0 if np.isclose(lhs, rhs) else np.inf)
    return CheckResult("divergence", {"n": spec.n, "r": spec.r, "i": i, "samples": samples},
                       lhs, rhs, se, float(disc))


def rotation_derivative(f, p, i, j):
    """X_{i,j} f = p_j df/dp_i - p_i df/dp_j for an observable with a gradient."""
    g = f.grad(p)
    return p[..., j] * g[..., i] - p[..., i] * g[..., j]


def telescoping_check(f, i, j, spec, samples, rng):
    """Check E[X_{i,j}(f) p_i p_j] = E[sum_{k=i}^{j-1} X_{k,k+1}(f) p_k p_{k+1}] on the sphere.

    The two integrands differ pointwise; ``pointwise_gap`` reports the
    largest sampled absolute difference.
    """
    if not 0 <= i < j < spec.n:
        raise ValueError("need 0 <= i < j < n")
    p = sample_sphere(spec, rng, samples)
    g = f.grad(p)
    left = (p[:, j] * g[:, i] - p[:, i] * g[:, j]) * p[:, i] * p[:, j]
    right = np.zeros(samples)
    for k in range(i, j):
        right += (p[:, k + 1] * g[:, k] - p[:, k] * g[:, k + 1]) * p[:, k] * p[:, k + 1]
    lhs, _ = _mean_se(left)
    rhs, _ = _mean_se(right)
    _, se = _mean_se(left - right)
    gap = float(np.max(np.abs(left - right)))
    disc = (lhs - rhs) / se if se > 0 else 0.0
    return CheckResult("telescoping", {"n": spec.n, "r": spec.r, "i": i, "j": j,
                                       "samples": samples},
                       lhs, rhs, se, float(disc), pointwise_gap=gap)


def telescoping_exact(f, i, j, spec):
    """Both sides of the telescoping identity for a polynomial, from closed forms."""
    lhs = f.rotation(i, j) * LocalFunction.var(i) * LocalFunction.var(j)
    rhs = LocalFunction()
    for k in range(i, j):
        rhs = rhs + f.rotation(k, k + 1) * LocalFunction.var(k) * LocalFunction.var(k + 1)
    return sphere_expectation(lhs, spec), sphere_expectation(rhs, spec)


def ensemble_gap(g, N, y, samples=0, rng=None, order=12):
    """N |E_sphere[g] - E_gauss[g]| on the sphere of N sites and radius y sqrt(N).

    Polynomials use closed forms on both sides (stderr 0).  Other
    observables use Monte Carlo on the sphere and Gauss-Hermite for the
    Gaussian side.  Returns ``(scaled_gap, stderr)``.
    """
    spec = SphereSpec.for_model(N, y)
    if isinstance(g, LocalFunction):
        gap = sphere_expectation(g, spec) - g.gaussian_expectation(y)
        return float(N * abs(gap)), 0.0
    from .model import gaussian_expectation
    if rng is None or samples <= 0:
        raise ValueError("non-polynomial observables need samples and an rng")
    p = sample_sphere(spec, rng, samples)
    m, se = _mean_se(g(p))
    eg = gaussian_expectation(g, y, order=order, n_sites=N)
    return float(N * abs(m - eg)), float(N * se)


def loglog_slope(ns, values):
    """Least-squares slope of log(values) against log(ns)."""
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])
