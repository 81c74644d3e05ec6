"""Energy fluctuation field, Ornstein-Uhlenbeck predictions, CLT variances and
the Boltzmann-Gibbs residual.

Two time conventions coexist and are kept apart by ``ModelParams.topology``
and ``IntegratorConfig.accelerate``:

* field and residual measurements run on the torus with the generator N^2 L;
* CLT time-variances run on the open chain of 2N+1 sites at unscaled time.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import (IntegratorConfig, make_noise, map_replica_batches, replica_rngs,
                       run_recorded)
from .model import ModelParams, currents, sample_equilibrium
from .spheres import SphereSpec, sample_sphere
from .stats import StatSeries, fit_exponential_decay, linear_fit, replica_mean

MIN_REPLICAS = 8


@dataclass(frozen=True)
class TestFunction:
    """Smooth periodic test function on the torus (0, 1].

    ``fourier(n, phase)`` is sqrt(2) cos(2 pi n u + phase), normalized so that
    <H, H> = 1 for n >= 1.  ``tabulated`` interpolates values (and a
    derivative table) on a uniform grid.
    """

    kind: str
    mode: int = 0
    phase: float = 0.0
    values: tuple = None
    derivative: tuple = None

    __test__ = False  # keep pytest from collecting the class

    @classmethod
    def fourier(cls, n, phase=0.0):
        if int(n) != n or n < 0:
            raise ValueError("Fourier mode must be a nonnegative integer")
        return cls("fourier", int(n), float(phase))

    @classmethod
    def constant(cls):
        return cls("constant")

    @classmethod
    def tabulated(cls, values, derivative=None):
        values = tuple(float(v) for v in values)
        if derivative is None:
            m = len(values)
            v = np.asarray(values)
            derivative = tuple((np.roll(v, -1) - np.roll(v, 1)) * m / 2)
        return cls("tabulated", values=values, derivative=tuple(float(d) for d in derivative))

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "constant":
            return np.ones_like(u)
        if self.kind == "fourier":
            if self.mode == 0:
                return np.full_like(u, np.sqrt(2) * np.cos(self.phase))
            return np.sqrt(2) * np.cos(2 * np.pi * self.mode * u + self.phase)
        return self._interp(self.values, u)

    def deriv(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(u)
        if self.kind == "fourier":
            w = 2 * np.pi * self.mode
            return -np.sqrt(2) * w * np.sin(w * u + self.phase)
        return self._interp(self.derivative, u)

    def deriv2(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "fourier":
            w = 2 * np.pi * self.mode
            return -w * w * self(u)
        if self.kind == "constant":
            return np.zeros_like(u)
        d = np.asarray(self.derivative)
        m = d.size
        return self._interp(tuple((np.roll(d, -1) - np.roll(d, 1)) * m / 2), u)

    @staticmethod
    def _interp(table, u):
        t = np.asarray(table)
        grid = np.arange(t.size) / t.size
        return np.interp(np.mod(u, 1.0), grid, t, period=1.0)

    def on_lattice(self, N):
        return self(np.arange(N) / N)

    def discrete_gradient(self, N):
        """N [H((x+1)/N) - H(x/N)] for x = 0..N-1."""
        h = self.on_lattice(N)
        return N * (np.roll(h, -1) - h)

    def to_config(self):
        if self.kind == "tabulated":
            return {"kind": "tabulated", "values": list(self.values)}
        return {"kind": self.kind, "mode": self.mode, "phase": self.phase}

    @classmethod
    def from_config(cls, cfg):
        if cfg["kind"] == "fourier":
            return cls.fourier(cfg["mode"], cfg.get("phase", 0.0))
        if cfg["kind"] == "constant":
            return cls.constant()
        if cfg["kind"] == "tabulated":
            return cls.tabulated(cfg["values"], cfg.get("derivative"))
        raise ValueError(f"unknown test function kind {cfg['kind']!r}")


def field_eval(p, H, y, topology="periodic"):
    """Y^N(H) = N^{-1/2} sum_x H(x/N) (p_x^2 - y^2); ``p`` may carry leading axes."""
    if topology != "periodic":
        raise ValueError("the fluctuation field is defined on the torus only")
    p = np.asarray(p, dtype=float)
    N = p.shape[-1]
    return (p * p - y * y) @ H.on_lattice(N) / np.sqrt(N)


def field_variance_prediction(H, N, y):
    """Equilibrium variance 2 y^4 (1/N) sum_x H(x/N)^2 of Y^N(H)."""
    return 2 * y**4 * float(np.mean(H.on_lattice(N) ** 2))


def ou_covariance_predict(H1, H2, lag, y, a_hat, grid=1024):
    """2 y^4 <S_lag H1, H2> for the heat semigroup generated by a_hat * Laplacian.

    Pairs of Fourier modes use the closed form; anything else goes through an
    FFT on a uniform grid.
    """
    if lag < 0:
        raise ValueError("lag must be nonnegative (use symmetry for negative lags)")
    if not a_hat > 0:
        raise ValueError("a_hat must be positive")
    if H1.kind == "fourier" and H2.kind == "fourier":
        if H1.mode != H2.mode:
            return 0.0
        n = H1.mode
        if n == 0:
            return 2 * y**4 * 2 * np.cos(H1.phase) * np.cos(H2.phase)
        return float(2 * y**4 * np.exp(-a_hat * (2 * np.pi * n) ** 2 * lag)
                     * np.cos(H1.phase - H2.phase))
    u = np.arange(grid) / grid
    f1 = np.fft.rfft(H1(u))
    k = np.arange(f1.size)
    s = np.fft.irfft(f1 * np.exp(-a_hat * (2 * np.pi * k) ** 2 * lag), grid)
    return float(2 * y**4 * np.mean(s * H2(u)))


# --- simulation drivers ----------------------------------------------------

def _records(state, params, config, n_records, stride, noise, chunk):
    """Yield blocks of snapshots (R, <=chunk, N) covering n_records."""
    done = 0
    while done < n_records:
        k = min(chunk, n_records - done)
        rec, _ = run_recorded(state, k, stride, params, config, noise=noise)
        done += k
        yield rec


# doubles held per block of snapshots
_RECORD_BUDGET = 1 << 21
# replicas simulated together
REPLICA_BATCH = 32


def _chunk_for(replicas, n_sites):
    return max(1, _RECORD_BUDGET // (replicas * n_sites))


def _integrate_paths(state, params, config, n_rec, stride, noise, integrands, marks, dt):
    """Advance ``state`` and return cumulative trapezoid integrals at record indices ``marks``.

    ``integrands(p)`` maps a (R, ..., N) block to a dict of (R, ...) arrays.
    Returns ``{name: (R, len(marks))}``.
    """
    R = state.shape[0]
    prev = integrands(state)
    acc = {k: np.zeros(R) for k in prev}
    at = {k: np.zeros((R, len(marks))) for k in prev}
    pos = 0
    chunk = _chunk_for(R, params.n_sites)
    for rec in _records(state, params, config, n_rec, stride, noise, chunk):
        cur = integrands(rec)
        idx = np.arange(pos + 1, pos + rec.shape[1] + 1)
        hits = [(j, np.flatnonzero(idx == m)) for j, m in enumerate(marks)]
        for k in cur:
            full = np.concatenate([prev[k][:, None], cur[k]], axis=1)
            cum = acc[k][:, None] + _trapezoid(full, dt)[:, 1:]
            for j, h in hits:
                if h.size:
                    at[k][:, j] = cum[:, h[0]]
            acc[k] = cum[:, -1]
            prev[k] = cur[k][:, -1]
        pos += rec.shape[1]
    return at


def field_series(params, config, replicas, n_samples, stride, tests):
    """Simulate from equilibrium and record Y^N(H) for each test function.

    Returns ``(times, Y, seeds)`` with ``Y`` of shape (replicas, n_samples + 1,
    len(tests)); time 0 is included.
    """
    if not params.periodic:
        raise ValueError("field measurements need the periodic chain")
    rngs, seeds = replica_rngs(config.seed, replicas)
    weights = np.stack([H.on_lattice(params.n_sites) for H in tests], axis=1)
    norm = 1.0 / np.sqrt(params.n_sites)
    y2 = params.y**2

    def run(batch):
        state = np.stack([sample_equilibrium(params, g) for g in batch])
        noise = make_noise(batch, params, config)
        out = [((state * state - y2) @ weights * norm)[:, None, :]]
        chunk = _chunk_for(len(batch), params.n_sites)
        for rec in _records(state, params, config, n_samples, stride, noise, chunk):
            out.append((rec * rec - y2) @ weights * norm)
        return np.concatenate(out, axis=1)

    Y = np.concatenate(map_replica_batches(run, rngs, REPLICA_BATCH), axis=0)
    dt = config.macro_step(params.n_sites) * stride
    return np.arange(Y.shape[1]) * dt, Y, seeds


def empirical_time_covariance(Y1, Y2, lags, dt=1.0, seeds=()):
    """Replica-averaged E[Y_s(H1) Y_{s+lag}(H2)] from series of shape (replicas, T).

    Each replica contributes its time average over s; error bars are the
    spread across replicas (each replica is one independent batch).
    """
    Y1 = np.atleast_2d(Y1)
    Y2 = np.atleast_2d(Y2)
    R, T = Y1.shape
    if R < MIN_REPLICAS:
        raise ValueError(f"need at least {MIN_REPLICAS} replicas for error bars, got {R}")
    lags = np.asarray(lags, dtype=int)
    if np.any(lags < 0) or np.any(lags >= T):
        raise ValueError("lags must lie in [0, series length)")
    per = np.stack([np.mean(Y1[:, : T - L] * Y2[:, L:], axis=1) for L in lags], axis=1)
    m, se = replica_mean(per)
    return StatSeries(lags * dt, m, se, R, list(seeds))


def fit_ou_decay(series, max_lag=None):
    """Exponential fit of a covariance StatSeries; returns a DecayFit."""
    sel = np.ones(len(series), bool) if max_lag is None else series.grid <= max_lag
    return fit_exponential_decay(series.grid[sel], series.estimates[sel], series.stderr[sel])


# --- evaluation of translates ---------------------------------------------

class _Powers:
    """Cache of rolled powers p_{x+s}^e evaluated for all x at once."""

    def __init__(self, p):
        self.p = p
        self.cache = {}

    def get(self, s, e):
        key = (s, e)
        if key not in self.cache:
            if e == 1:
                self.cache[key] = np.roll(self.p, -s, axis=-1)
            else:
                self.cache[key] = self.get(s, 1) ** e
        return self.cache[key]


def _compile(f):
    """Sparse dense-array form (offsets, idx, exps, coefs, max_exp) of a polynomial."""
    sites = list(f.sites) or [0]
    col = {s: k for k, s in enumerate(sites)}
    K = max((len(m) for m in f.terms), default=1) or 1
    idx = np.zeros((len(f.terms), K), dtype=np.int64)
    exps = np.zeros((len(f.terms), K), dtype=np.int64)
    coefs = np.zeros(len(f.terms))
    for t, (m, c) in enumerate(f.terms.items()):
        coefs[t] = c
        for k, (s, e) in enumerate(m):
            idx[t, k] = col[s]
            exps[t, k] = e
    max_exp = int(exps.max()) if exps.size else 0
    return np.array(sites, dtype=np.int64), idx, exps, coefs, max_exp


def translates(f, p):
    """Array whose entry x is (tau^x f)(p) on the periodic chain, for all x."""
    p = np.asarray(p, dtype=float)
    flat = np.ascontiguousarray(p.reshape(-1, p.shape[-1]))
    out = np.zeros_like(flat)
    if f.terms:
        form = f._compiled if hasattr(f, "_compiled") else _compile(f)
        _kernels.poly_translates(flat, *form, out)
    return out.reshape(p.shape)


class _Compiled:
    """A polynomial with its dense form cached for :func:`translates`."""

    def __init__(self, f):
        self.terms = f.terms
        self._compiled = _compile(f)


class GeneratorTranslates:
    """Evaluates (L tau^x F)(p) for every x by the per-bond expansion.

    Only bonds touching the support of F contribute; for each such bond
    b the polynomials X_b F and X_b^2 F are prepared once.
    """

    def __init__(self, F, coupling):
        self.coupling = coupling
        self.parts = []
        if F.terms:
            lo, hi = min(F.sites), max(F.sites)
            for b in range(lo - 1, hi + 1):
                xf = F.bond(b)
                if xf.is_zero(0.0):
                    continue
                self.parts.append((b, _Compiled(xf), _Compiled(xf.bond(b))))

    def __call__(self, p, powers=None):
        p = np.asarray(p, dtype=float)
        pw = powers or _Powers(p)
        out = np.zeros(p.shape)
        c = self.coupling
        for b, xf, x2f in self.parts:
            r, s = pw.get(b, 1), pw.get(b + 1, 1)
            a = c(r, s)
            xa = s * c.d_r(r, s) - r * c.d_s(r, s)
            out = out + 0.5 * (a * translates(x2f, p) + xa * translates(xf, p))
        return out


def _trapezoid(v, dt, axis=1):
    """Cumulative trapezoid integral along ``axis`` (value 0 at the first node)."""
    v = np.moveaxis(v, axis, -1)
    inc = 0.5 * (v[..., 1:] + v[..., :-1]) * dt
    out = np.concatenate([np.zeros(v.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
    return np.moveaxis(out, -1, axis)


# --- Boltzmann-Gibbs residual -----------------------------------------------

@dataclass
class ResidualIntegrals:
    """Per-replica time integrals entering I^1 on a grid of horizons.

    ``X[name]`` is int sqrt(N) sum_x grad_N H (W_x - L tau^x F) and ``Z`` is
    int sqrt(N) sum_x grad_N H (p_x^2 - p_{x+1}^2); then
    I^1(a_hat, F) = X[F] - a_hat Z.  Shapes (replicas, len(times)).
    """

    times: np.ndarray
    X: dict
    Z: np.ndarray
    seeds: list

    def residual(self, name, a_hat):
        return (self.X[name] - a_hat * self.Z) ** 2


def residual_integrals(params, config, H, functions, t, replicas, stride=4, n_times=8):
    """Simulate equilibrium trajectories and accumulate the I^1 integrals.

    ``functions`` maps a label to the local function F subtracted through
    L tau^x F (use twice the variational minimizer, see
    :meth:`DiffusionResult.current_function`).  The horizon ``t`` is
    macroscopic (generator N^2 L); the observer spacing is ``stride`` sweeps.
    """
    if not params.periodic or not config.accelerate:
        raise ValueError("the residual lives on the torus with accelerated dynamics")
    N = params.n_sites
    dt = config.macro_step(N) * stride
    n_rec = int(round(t / dt))
    if n_rec < n_times:
        raise ValueError("horizon shorter than the requested time grid")
    marks = np.unique(np.linspace(0, n_rec, n_times + 1).round().astype(int))[1:]
    rngs, seeds = replica_rngs(config.seed, replicas)
    gens = {k: GeneratorTranslates(F, params.coupling) for k, F in functions.items()}
    g = H.discrete_gradient(N) * np.sqrt(N)

    def integrands(p):
        pw = _Powers(p)
        w = currents(p, params) @ g
        p2 = p * p
        out = {k: w - gen(p, pw) @ g for k, gen in gens.items()}
        out["__z"] = (p2 - np.roll(p2, -1, axis=-1)) @ g
        return out

    def run(batch):
        state = np.stack([sample_equilibrium(params, r) for r in batch])
        noise = make_noise(batch, params, config)
        return _integrate_paths(state, params, config, n_rec, stride, noise, integrands,
                                marks, dt)

    parts = map_replica_batches(run, rngs, REPLICA_BATCH)
    at = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    X = {k: at[k] for k in functions}
    return ResidualIntegrals(marks * dt, X, at["__z"], seeds)


def bg_residual(integrals, name, a_hat):
    """E[(I^1)^2] on the horizon grid with replica error bars."""
    r = integrals.residual(name, a_hat)
    m, se = replica_mean(r)
    return StatSeries(integrals.times, m, se, r.shape[0], integrals.seeds,
                      meta={"function": name, "a_hat": a_hat})


@dataclass
class PairedComparison:
    difference: float
    stderr: float
    base: float
    improved: float

    @property
    def z(self):
        return self.difference / self.stderr if self.stderr > 0 else np.inf


def paired_residual_difference(integrals, base, improved, a_hat, horizon=-1):
    """Replica-paired E[(I^1_base)^2 - (I^1_improved)^2] at one horizon."""
    rb = integrals.residual(base, a_hat)[:, horizon]
    ri = integrals.residual(improved, a_hat)[:, horizon]
    d, se = replica_mean(rb - ri)
    return PairedComparison(float(d), float(se), float(rb.mean()), float(ri.mean()))


def a_hat_scan(integrals, name, grid, horizon=-1):
    """Residual on a grid of trial coefficients plus the exact quadratic minimizer.

    The residual is quadratic in a_hat, so the minimizer E[XZ]/E[Z^2] is
    available in closed form; ``grid`` gives the scanned values.
    """
    X = integrals.X[name][:, horizon]
    Z = integrals.Z[:, horizon]
    grid = np.asarray(grid, dtype=float)
    vals = np.array([np.mean((X - a * Z) ** 2) for a in grid])
    ses = np.array([np.std((X - a * Z) ** 2, ddof=1) / np.sqrt(X.size) for a in grid])
    best = float(np.mean(X * Z) / np.mean(Z * Z))
    s = StatSeries(grid, vals, ses, X.size, integrals.seeds,
                   meta={"function": name, "argmin_grid": float(grid[np.argmin(vals)]),
                         "argmin_exact": best})
    return s


# --- CLT time-variances on the open chain ----------------------------------

def _open_params(N, y, coupling):
    return ModelParams(2 * N + 1, y, coupling, "open")


def clt_observable(kind, N, params, F=None, a_hat=None):
    """Vectorized V(p) on the open chain of 2N+1 sites (site x at index x+N).

    ``kind`` is ``"A"`` (p_N^2 - p_{-N}^2), ``"B"`` (sum of bond currents),
    ``"H"`` (sum_x L tau^x F over translates inside the box) or ``"combo"``
    (B + a_hat A - H^F).
    """
    kind = kind.upper() if kind != "combo" else kind
    if kind in ("H", "combo") and F is None:
        raise ValueError(f"observable {kind} needs F")
    if kind == "combo" and a_hat is None:
        raise ValueError("combo needs a_hat")

    def A(p):
        return p[..., -1] ** 2 - p[..., 0] ** 2

    def B(p):
        return currents(p, params).sum(axis=-1)

    if kind in ("H", "combo"):
        from .model import Observable, apply_generator
        from .variational import _psi
        psi = _psi(F, N)
        obs = Observable.from_polynomial(psi, params.n_sites, offset=N)

        def Hf(p):
            return apply_generator(obs, p, params)
    if kind == "A":
        return A
    if kind == "B":
        return B
    if kind == "H":
        return Hf
    if kind == "combo":
        return lambda p: B(p) + a_hat * A(p) - Hf(p)
    raise ValueError(f"unknown observable {kind!r}")


def clt_time_variance(kinds, N, y, coupling, t, replicas, windows=1, dt_micro=0.05,
                      stride=2, seed=0, F=None, a_hat=None, fractions=(0.25, 0.5, 1.0),
                      pairs=()):
    """(1/t) E[(int_0^t V ds)^2] at unscaled time on the open chain of 2N+1 sites.

    Each replica starts from a uniform point on the sphere of radius
    y sqrt(2N+1) and runs ``windows`` consecutive windows of length ``t``;
    every window is one sample (windows are nearly independent once ``t``
    exceeds the relaxation time).  Sub-windows of length ``f t`` for
    ``f`` in ``fractions`` give the finite-t curve, extrapolated linearly in
    1/t.  ``pairs`` lists ``(kind1, kind2)`` cross terms to report as
    ``(1/t) E[int V1 int V2]``.

    Returns a dict ``kind -> StatSeries`` over the horizons; ``meta`` holds
    the 1/t extrapolation and the per-2N normalization.
    """
    params = _open_params(N, y, coupling)
    config = IntegratorConfig(dt_macro=dt_micro, accelerate=False, seed=seed)
    obs = {k: clt_observable(k, N, params, F, a_hat) for k in kinds}
    dt = dt_micro * stride
    n_rec = int(round(t / dt))
    fr = np.asarray(fractions, dtype=float)
    marks = np.maximum((fr * n_rec).round().astype(int), 1)
    rngs, seeds = replica_rngs(seed, replicas)
    spec = SphereSpec.for_model(2 * N + 1, y)
    horizons = marks * dt
    samples = {k: [] for k in kinds}
    cross = {pq: [] for pq in pairs}

    def integrands(p):
        return {k: f(p) for k, f in obs.items()}

    def run(batch):
        state = np.stack([sample_sphere(spec, g) for g in batch])
        noise = make_noise(batch, params, config)
        return [_integrate_paths(state, params, config, n_rec, stride, noise, integrands,
                                 marks, dt) for _ in range(windows)]

    for per_window in map_replica_batches(run, rngs, REPLICA_BATCH):
        for at in per_window:
            for k in kinds:
                samples[k].append(at[k] ** 2 / horizons)
            for a, b in pairs:
                cross[(a, b)].append(at[a] * at[b] / horizons)
    out = {}

    def series(vals, label):
        v = np.concatenate(vals, axis=0)
        m, se = replica_mean(v)
        meta = {"N": N, "y": y, "t": t, "windows": windows, "dt_micro": dt_micro,
                "observable": label}
        if horizons.size >= 2:
            a0, b1, cov = linear_fit(1.0 / horizons, m, se)
            meta.update(extrapolated=a0, extrapolated_stderr=float(np.sqrt(cov[0, 0])),
                        slope_in_inverse_t=b1)
        else:
            meta.update(extrapolated=float(m[-1]), extrapolated_stderr=float(se[-1]))
        meta["per_2N"] = meta["extrapolated"] / (2 * N)
        meta["per_2N_stderr"] = meta["extrapolated_stderr"] / (2 * N)
        return StatSeries(horizons, m, se, v.shape[0], seeds, meta=meta)

    for k in kinds:
        out[k] = series(samples[k], k)
    for pq in pairs:
        out[pq] = series(cross[pq], "x".join(pq))
    return out
