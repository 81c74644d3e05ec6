"""Relaxation and spectral-gap measurements.

Kac random-rotation walk on spheres, Dirichlet-form comparisons (the path
lemma and the Poincare inequality on circles) and the diffusive N^2 scaling
of the relaxation time of the nearest-neighbour dynamics.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import (IntegratorConfig, make_noise, map_replica_batches, replica_rngs,
                       run_recorded)
from .model import ModelParams
from .polynomial import LocalFunction
from .spheres import CheckResult, SphereSpec, sample_sphere
from .stats import (StatSeries, autocorrelation, exponential_tail_time,
                    integrated_autocorr_time, jackknife, linear_fit, replica_mean, sokal_window)


class UnresolvedError(RuntimeError):
    """The run is too short to resolve the autocorrelation time."""


# --- Kac walk ----------------------------------------------------------------

@dataclass
class KacState:
    """Point on S^{N-1}(r) and the number of rotations applied so far."""

    x: np.ndarray
    steps: int = 0

    @property
    def radius(self):
        return float(np.linalg.norm(self.x))


def _random_pairs(N, n, rng):
    i = rng.integers(0, N, n)
    j = rng.integers(0, N - 1, n)
    j = np.where(j >= i, j + 1, j)
    return np.minimum(i, j), np.maximum(i, j)


def kac_step(state, rng, n_steps=1):
    """Apply ``n_steps`` Kac rotations: uniform pair i < j, uniform angle, clockwise."""
    N = state.x.size
    if N < 2:
        raise ValueError("the Kac walk needs at least two coordinates")
    i, j = _random_pairs(N, n_steps, rng)
    theta = rng.uniform(0.0, 2 * np.pi, n_steps)
    x = np.array(state.x, dtype=float)
    _kernels.kac_block(x, i.astype(np.int64), j.astype(np.int64), theta)
    return KacState(x, state.steps + n_steps)


def _rotate(p, i, j, theta):
    """Clockwise rotation R^theta_{i,j} applied to the last axis of ``p``."""
    p = np.array(p, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    u, v = p[..., i].copy(), p[..., j].copy()
    p[..., i] = c * u + s * v
    p[..., j] = -s * u + c * v
    return p


def _evaluate(f, p):
    return f(p) if isinstance(f, LocalFunction) else np.asarray(f(p))


def kac_dirichlet(f, spec, samples, rng):
    """Monte Carlo D_N(f) = E over (x, pair, theta) of [f(R^theta_{i,j} x) - f(x)]^2.

    Returns ``(estimate, stderr)``.
    """
    x = sample_sphere(spec, rng, samples)
    i, j = _random_pairs(spec.n, samples, rng)
    theta = rng.uniform(0, 2 * np.pi, samples)
    c, s = np.cos(theta), np.sin(theta)
    rows = np.arange(samples)
    u, v = x[rows, i], x[rows, j]
    xr = x.copy()
    xr[rows, i] = c * u + s * v
    xr[rows, j] = -s * u + c * v
    d = (_evaluate(f, xr) - _evaluate(f, x)) ** 2
    m, se = replica_mean(d)
    return float(m), float(se)


def bond_energy(f, x, i, j, n_theta=None):
    """B_{i,j} f(x) = (1/2pi) int [f(R^theta_{i,j} x) - f(x)]^2 dtheta per sample.

    For polynomials the integrand is a trigonometric polynomial of degree at
    most 2 deg f, so a uniform grid of more than that many angles is exact.
    """
    if n_theta is None:
        deg = f.degree if isinstance(f, LocalFunction) else 8
        n_theta = 2 * deg + 2
    f0 = _evaluate(f, x)
    tot = np.zeros(np.shape(f0))
    for th in 2 * np.pi * np.arange(n_theta) / n_theta:
        tot += (_evaluate(f, _rotate(x, i, j, th)) - f0) ** 2
    return tot / n_theta


def path_lemma_check(f, i, k, spec, samples, rng, last_bond=True, constant=64.0):
    """Check E[B_{i,i+k} f] <= 64 k sum_j E[B_{i+j,i+j+1} f] on the sphere.

    The nearest-neighbour sum runs over j = 0..k-1 (``last_bond=True``), the
    range that makes the inequality true in general; ``last_bond=False``
    stops at j = k-2.  Both sides use the same sphere samples, the angle
    integrals are exact for polynomials, and the margin rhs - lhs carries a
    paired standard error.  The verdict fails when margin < -4 sigma.
    """
    if k < 2:
        raise ValueError("path lemma needs k >= 2")
    if i + k >= spec.n:
        raise ValueError("bond (i, i+k) outside the sphere coordinates")
    x = sample_sphere(spec, rng, samples)
    lhs = bond_energy(f, x, i, i + k)
    stop = k if last_bond else k - 1
    near = sum((bond_energy(f, x, i + j, i + j + 1) for j in range(stop)), np.zeros(samples))
    rhs = constant * k * near
    return _one_sided("path_lemma", {"n": spec.n, "r": spec.r, "i": i, "k": k,
                                     "samples": samples, "last_bond": last_bond}, lhs, rhs)


def _one_sided(name, params, lhs, rhs):
    """CheckResult for lhs <= rhs: the discrepancy counts only violations (in sigma)."""
    margin, se = replica_mean(rhs - lhs)
    if se > 0:
        disc = max(0.0, -margin / se)
    else:
        disc = 0.0 if margin >= -1e-12 * max(1.0, abs(float(np.mean(rhs)))) else np.inf
    res = CheckResult(name, params, float(lhs.mean()), float(rhs.mean()), float(se), float(disc))
    res.params["margin"] = float(margin)
    return res


def poincare_circle_check(f, i, j, spec, samples, rng):
    """Check E[B_{i,j} f] <= 2 pi E[(X_{i,j} f)^2] for a polynomial ``f``."""
    x = sample_sphere(spec, rng, samples)
    lhs = bond_energy(f, x, i, j)
    rhs = 2 * np.pi * f.rotation(i, j)(x) ** 2
    return _one_sided("poincare_circle", {"n": spec.n, "r": spec.r, "i": i, "j": j,
                                          "samples": samples}, lhs, rhs)


# --- relaxation times --------------------------------------------------------

def fourier_energy_probe(N, mode=1):
    """sum_x cos(2 pi mode x / N) p_x^2 as a polynomial (mean zero on every sphere)."""
    return sum((np.cos(2 * np.pi * mode * x / N) * LocalFunction.var(x) ** 2
                for x in range(N)), LocalFunction())


def probe_rate(N, mode=1):
    """Exact decay rate 4 sin^2(pi mode / N) of the Fourier probe when a = 1 (periodic)."""
    return 4 * np.sin(np.pi * mode / N) ** 2


@dataclass
class RelaxationResult:
    N: int
    tau: float
    stderr: float
    tau_int: float
    tau_exp: float
    sample_dt: float
    run_length: float
    replicas: int


def _weights(probe, N):
    """Linear weights w with probe(p) = sum_x w_x p_x^2, or None."""
    w = np.zeros(N)
    for m, c in probe.terms.items():
        if len(m) != 1 or m[0][1] != 2:
            return None
        w[m[0][0] % N] += c
    return w


def relaxation_time(N, y, coupling, probe=None, topology="periodic", replicas=8,
                    run_length=None, sample_dt=None, dt=0.05, seed=0):
    """Autocorrelation time of a probe in stationary unaccelerated runs.

    Runs start from a sphere point (the dynamics never leaves it), are
    sampled every ``sample_dt`` and analysed per replica: the integrated
    time (Sokal window) and the exponential tail time are both computed
    and the larger is reported, with the spread across replicas as error.
    Defaults scale with the expected N^2 relaxation time.
    """
    probe = fourier_energy_probe(N) if probe is None else probe
    params = ModelParams(N, y, coupling, topology)
    tau_guess = N**2 / (4 * np.pi**2) + 0.5
    sample_dt = sample_dt or max(dt, round(tau_guess / 10 / dt) * dt)
    run_length = run_length or 400 * tau_guess
    stride = max(1, int(round(sample_dt / dt)))
    sample_dt = stride * dt
    n_rec = int(round(run_length / sample_dt))
    config = IntegratorConfig(dt_macro=dt, accelerate=False, seed=seed)
    rngs, _ = replica_rngs(seed, replicas)
    spec = SphereSpec.for_model(N, y)
    w = _weights(probe, N)

    def run(batch):
        # uniform on the sphere is stationary, so no burn-in
        state = np.stack([sample_sphere(spec, g) for g in batch])
        noise = make_noise(batch, params, config)
        series = []
        done = 0
        chunk = max(1, (1 << 21) // (len(batch) * N))
        while done < n_rec:
            k = min(chunk, n_rec - done)
            rec, _ = run_recorded(state, k, stride, params, config, noise=noise)
            series.append(rec * rec @ w if w is not None else probe(rec))
            done += k
        return np.concatenate(series, axis=1)

    s = np.concatenate(map_replica_batches(run, rngs, 1), axis=0)
    rhos = np.stack([autocorrelation(r) for r in s])
    window = sokal_window(rhos.mean(axis=0))[1]
    if window >= s.shape[1] // 4:
        raise UnresolvedError(f"N={N}: autocorrelation window {window} is not small "
                              f"compared with the run ({s.shape[1]} samples); "
                              "increase run_length")

    # both estimators work on the replica-averaged autocorrelation (a per-replica
    # tail fit stops at noisy floor crossings and is biased upward); jackknife errors
    def t_int(idx):
        return 0.5 * sokal_window(rhos[idx].mean(axis=0))[0] * sample_dt

    def t_exp(idx):
        try:
            return exponential_tail_time(rhos[idx].mean(axis=0)) * sample_dt
        except ValueError:
            return 0.0

    ti, ti_se = jackknife(t_int, replicas)
    te, te_se = jackknife(t_exp, replicas)
    if ti * 50 > run_length:
        raise UnresolvedError(f"N={N}: run length {run_length} is below 50 relaxation times")
    m, se = (ti, ti_se) if ti >= te else (te, te_se)
    return RelaxationResult(N, float(m), float(se), ti, te,
                            sample_dt, run_length, replicas)


@dataclass
class ScalingFit:
    alpha: float
    stderr: float
    ci_low: float
    ci_high: float
    prefactor: float

    def to_record(self):
        return {"alpha": self.alpha, "stderr": self.stderr, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "prefactor": self.prefactor}


def scaling_fit(ns, taus, stderrs=None, z=1.96):
    """Weighted least-squares exponent alpha in tau ~ C N^alpha with a z-sigma interval."""
    ns = np.asarray(ns, dtype=float)
    taus = np.asarray(taus, dtype=float)
    sig = None if stderrs is None else np.maximum(np.asarray(stderrs) / taus, 1e-12)
    a, b, cov = linear_fit(np.log(ns), np.log(taus), sig)
    se = float(np.sqrt(cov[1, 1]))
    return ScalingFit(b, se, b - z * se, b + z * se, float(np.exp(a)))


def relaxation_scaling(ns, y, coupling, replicas=8, seed=0, **kw):
    """Relaxation times over a list of sizes and the fitted exponent.

    Returns ``(StatSeries over N, ScalingFit)``.
    """
    res = [relaxation_time(N, y, coupling, replicas=replicas, seed=seed + k, **kw)
           for k, N in enumerate(ns)]
    taus = np.array([r.tau for r in res])
    ses = np.array([r.stderr for r in res])
    fit = scaling_fit(ns, taus, ses)
    series = StatSeries(np.asarray(ns, float), taus, ses, replicas,
                        extra={"tau_int": [r.tau_int for r in res],
                               "tau_exp": [r.tau_exp for r in res],
                               "exact_mode_time": [1 / probe_rate(N) for N in ns]},
                        meta={"fit": fit.to_record(), "probe": "sum_x cos(2 pi x/N) p_x^2"})
    return series, fit


def kac_default_spacing(N):
    return max(1, (N - 1) // 10)


def kac_expected_time(N, sample_every=None):
    """Integrated time (s/2)(1 + r^s)/(1 - r^s), r = 1 - 1/(N-1), of the sampled Kac probe.

    Equals N - 3/2 for unit spacing; for large N it is close to
    N - 3/2 + s^2 / (12 (N - 1)), so within O(1/N) of N - 1 in relative terms.
    """
    s = sample_every or kac_default_spacing(N)
    rs = (1 - 1 / (N - 1)) ** s
    return 0.5 * s * (1 + rs) / (1 - rs)


def kac_relaxation_time(N, y=1.0, events=None, replicas=8, seed=0, sample_every=None):
    """Autocorrelation time, in elementary rotation events, of the Fourier probe under Kac.

    The probe decays by a factor 1 - 1/(N-1) per event in expectation, so
    its autocorrelation time is N - 1 events up to the discreteness of the
    sampling; :func:`kac_expected_time` gives the exact value measured here.
    """
    rngs, _ = replica_rngs(seed, replicas)
    spec = SphereSpec.for_model(N, y)
    w = _weights(fourier_energy_probe(N), N)
    sample_every = sample_every or kac_default_spacing(N)
    events = events or 400 * (N - 1)
    n_samp = events // sample_every
    out = []
    for g in rngs:
        st = KacState(sample_sphere(spec, g))
        vals = np.empty(n_samp)
        for t in range(n_samp):
            st = kac_step(st, g, sample_every)
            vals[t] = st.x**2 @ w
        t_int, _ = integrated_autocorr_time(vals)
        out.append(0.5 * t_int * sample_every)
    m, se = replica_mean(np.array(out))
    return float(m), float(se)
