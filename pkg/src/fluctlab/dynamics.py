"""Energy-conserving integration of the bond-exchange diffusion.

Each bond update works in the angle coordinate of the pair
``(p_x, p_{x+1}) = rho (cos t, sin t)``.  There ``X_{x,x+1} = -d/dt``, so
the single-bond generator ``1/2 X(a X)`` is the circle diffusion

    dt = 1/2 a~'(t) dt + sqrt(a~(t)) dB,    a~(t) = a(rho cos t, rho sin t),

and one Euler step in ``t`` moves the pair along its circle: ``rho`` and
hence the total energy are untouched up to roundoff.  A sweep visits every
bond once (even bonds then odd bonds, or uniformly random picks).
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import sample_equilibrium  # noqa: F401  (re-exported for convenience)

SWEEPS = ("even_odd", "random_sequential")

# normals drawn per replica per refill, in units of sweeps x bonds
_BUFFER_TARGET = 1 << 18


class StabilityError(RuntimeError):
    """A bond update would take a drift step larger than the configured ratio."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Time step, sweep order and seeding.

    ``dt_macro`` is the macroscopic time per sweep.  With ``accelerate`` the
    process is generated by N^2 L, so each bond receives the unscaled time
    ``N^2 dt_macro``; otherwise macroscopic and bond time coincide.  When
    ``dt_macro`` is None the bond step defaults to 1e-3.
    """

    dt_macro: float = None
    sweep: str = "even_odd"
    accelerate: bool = True
    seed: int = 0
    stability: float = 0.1

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise ValueError(f"sweep must be one of {SWEEPS}")
        if self.dt_macro is not None and not self.dt_macro > 0:
            raise ValueError("dt_macro must be positive")
        if not 0 < self.stability <= 0.1:
            raise ValueError("stability ratio must lie in (0, 0.1]")

    def macro_step(self, n_sites):
        if self.dt_macro is not None:
            return float(self.dt_macro)
        return 1e-3 / n_sites**2 if self.accelerate else 1e-3

    def micro_step(self, n_sites):
        dt = self.macro_step(n_sites)
        return dt * n_sites**2 if self.accelerate else dt

    def to_config(self):
        return {"dt_macro": self.dt_macro, "sweep": self.sweep, "accelerate": self.accelerate,
                "seed": self.seed, "stability": self.stability}


@dataclass
class Trajectory:
    """Observer output along a run.

    ``values[name]`` has shape ``(len(times), replicas, ...)``; ``state`` is
    the final configuration; ``seeds`` labels the per-replica streams.
    """

    times: np.ndarray
    values: dict
    state: np.ndarray
    seeds: list = field(default_factory=list)
    config: IntegratorConfig = None


def replica_rngs(seed, replicas):
    """Independent per-replica generators split from one master seed.

    The second return value labels each stream as ``"<entropy>/<spawn index>"``.
    """
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(replicas)
    return ([np.random.default_rng(c) for c in children],
            [f"{c.entropy}/{c.spawn_key[-1]}" for c in children])


# --- replica-level parallelism ------------------------------------------------

_THREADS = 1


def set_threads(n):
    """Number of worker threads used for independent replica batches."""
    global _THREADS
    n = int(n)
    if n < 1:
        raise ValueError("threads must be >= 1")
    _THREADS = n


def get_threads():
    return _THREADS


def map_replica_batches(fn, rngs, batch=32, threads=None):
    """Apply ``fn`` to consecutive slices of ``rngs`` and return results in slice order.

    Every replica owns its generator and the slicing depends only on
    ``batch``, never on the thread count; callers merge the returned list in
    order, so results are bit-identical for any number of threads.
    """
    threads = threads or _THREADS
    slices = [rngs[i:i + batch] for i in range(0, len(rngs), batch)]
    if threads == 1 or len(slices) == 1:
        return [fn(s) for s in slices]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(min(threads, len(slices))) as ex:
        return list(ex.map(fn, slices))


def _coupling_code(coupling):
    if coupling.kind == "constant":
        return _kernels.CONSTANT, coupling.params["a0"], 1.0
    if coupling.kind == "gaussian_bump":
        return _kernels.GAUSSIAN_BUMP, coupling.params["eps"], coupling.params["width"] ** 2
    return None


def bond_update(p, x, dt_micro, rng, params, stability=0.1):
    """One angle-coordinate update of bond ``x``; returns a new array.

    ``p`` may carry leading replica axes; one normal is drawn per replica.
    """
    i, j = params.bond_sites(x)
    p = np.array(p, dtype=float)
    u, v = p[..., i].copy(), p[..., j].copy()
    c = params.coupling
    a = c(u, v)
    da = c.angular_derivative(u, v)
    drift = 0.5 * da * dt_micro
    if np.any(np.abs(drift) > stability):
        raise StabilityError(f"drift step {np.max(np.abs(drift)):.3g} on bond {x} exceeds "
                             f"{stability}; |p| = {np.linalg.norm(p):.6g}")
    xi = rng.standard_normal(np.shape(u))
    d = drift + np.sqrt(a * dt_micro) * xi
    d = np.where((u == 0) & (v == 0), 0.0, d)
    cs, sn = np.cos(d), np.sin(d)
    p[..., i] = u * cs - v * sn
    p[..., j] = u * sn + v * cs
    return p


class _Noise:
    """Buffered per-replica normals (and bond picks) consumed sweep by sweep."""

    def __init__(self, rngs, n_bonds, random_order):
        self.rngs = rngs
        self.nb = n_bonds
        self.random_order = random_order
        # bond picks come from a child stream so that the normals of a replica
        # do not depend on how many replicas share the buffer
        self.order_rngs = [g.spawn(1)[0] for g in rngs] if random_order else None
        self.block = max(1, _BUFFER_TARGET // max(1, n_bonds * len(rngs)))
        self.cursor = self.block
        self.normals = None
        self.orders = None

    def take(self, n):
        """Return (normals, orders, offset) views covering up to ``n`` sweeps."""
        if self.cursor >= self.block:
            self.normals = np.stack([g.standard_normal((self.block, self.nb)) for g in self.rngs])
            if self.random_order:
                self.orders = np.stack([g.integers(0, self.nb, (self.block, self.nb))
                                        for g in self.order_rngs]).astype(np.int64)
            self.cursor = 0
        n = min(n, self.block - self.cursor)
        off = self.cursor
        self.cursor += n
        return n, off


def _even_odd(n_bonds):
    return np.array(list(range(0, n_bonds, 2)) + list(range(1, n_bonds, 2)),
                    dtype=np.int64)[None, None, :]


def _advance(p, n_sweeps, params, config, noise, dt, stride=0, record=None):
    """Advance ``p`` (R, N) in place by ``n_sweeps``; optionally record every ``stride``."""
    code = _coupling_code(params.coupling)
    fixed = _even_odd(params.n_bonds)
    every = stride if record is not None else 0
    out = record if record is not None else _kernels.empty_out()
    done = 0
    rec_at = 0
    while done < n_sweeps:
        n, off = noise.take(n_sweeps - done)
        orders = noise.orders if noise.random_order else fixed
        phase = done % stride if every else 0
        if code is not None:
            r, b, drift = _kernels.sweep_block(
                p, noise.normals, orders, n, off, params.periodic, dt, code[0], code[1], code[2],
                config.stability, every, phase, out, rec_at)
            _check(r, b, drift, p, config)
        else:
            for t in range(n):
                row = orders[0, 0] if orders.shape[0] == 1 else None
                for k in range(params.n_bonds):
                    bonds = row[k] if row is not None else orders[:, off + t, k]
                    _python_update(p, bonds, noise.normals[:, off + t, k], dt, params, config)
                if every and (phase + t + 1) % every == 0:
                    record[:, rec_at + (phase + t + 1) // every - 1] = p
        if every:
            rec_at += (phase + n) // every
        done += n
    return rec_at


def _python_update(p, bonds, xi, dt, params, config):
    n = params.n_sites
    bonds = np.broadcast_to(bonds, xi.shape)
    rows = np.arange(p.shape[0])
    valid = params.periodic | (bonds < n - 1)
    i = bonds
    j = (bonds + 1) % n
    u, v = p[rows, i], p[rows, j]
    c = params.coupling
    drift = 0.5 * c.angular_derivative(u, v) * dt
    bad = np.abs(drift) > config.stability
    if np.any(bad & valid):
        r = int(np.argmax(bad & valid))
        _check(r, int(bonds[r]), float(drift[r]), p, config)
    d = np.where(valid & ~((u == 0) & (v == 0)), drift + np.sqrt(c(u, v) * dt) * xi, 0.0)
    cs, sn = np.cos(d), np.sin(d)
    p[rows, i] = u * cs - v * sn
    p[rows, j] = u * sn + v * cs


def _check(r, b, drift, p, config):
    if r >= 0:
        raise StabilityError(
            f"bond {b} (replica {r}): drift step {drift:.3g} exceeds stability ratio "
            f"{config.stability}; state norm |p| = {np.linalg.norm(p[r]):.6g}")


def evolve(p, T, params, config, observers=None, sample_every=None, rngs=None):
    """Run the diffusion for macroscopic time ``T``.

    Parameters
    ----------
    p : ndarray
        Initial state, ``(n_sites,)`` or ``(replicas, n_sites)``.
    T : float
        Macroscopic horizon; must be a whole number of ``dt_macro`` steps.
    observers : dict, optional
        ``name -> f(t, p)`` evaluated on the ``(replicas, n_sites)`` state
        at time 0 and every ``sample_every``.
    sample_every : float, optional
        Observer spacing, a whole number of steps (default: only 0 and T).
    rngs : list of Generator, optional
        Per-replica streams; by default split from ``config.seed``.

    Returns
    -------
    Trajectory
    """
    p = np.array(p, dtype=float)
    single = p.ndim == 1
    state = np.ascontiguousarray(np.atleast_2d(p))
    R, N = state.shape
    if N != params.n_sites:
        raise ValueError("state length does not match n_sites")
    dt_macro = config.macro_step(N)
    dt = config.micro_step(N)
    n_steps = int(round(T / dt_macro))
    if T < 0 or abs(n_steps * dt_macro - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a whole number of steps of {dt_macro}")
    if sample_every is None:
        stride = max(n_steps, 1)
    else:
        stride = int(round(sample_every / dt_macro))
        if stride < 1 or abs(stride * dt_macro - sample_every) > 1e-9 * max(1.0, sample_every):
            raise ValueError("sample_every must be a whole number of steps")
    seeds = []
    if rngs is None:
        rngs, seeds = replica_rngs(config.seed, R)
    noise = _Noise(rngs, params.n_bonds, config.sweep == "random_sequential")
    observers = observers or {}
    times = [0.0]
    values = {k: [np.asarray(f(0.0, state))] for k, f in observers.items()}
    done = 0
    while done < n_steps:
        k = min(stride, n_steps - done)
        _advance(state, k, params, config, noise, dt)
        done += k
        t = done * dt_macro
        times.append(t)
        for name, f in observers.items():
            values[name].append(np.asarray(f(t, state)))
    out = {k: np.array(v) for k, v in values.items()}
    final = state[0].copy() if single else state
    return Trajectory(np.array(times), out, final, seeds, config)


def run_recorded(p, n_records, stride, params, config, rngs=None, noise=None):
    """Advance ``n_records * stride`` sweeps, returning snapshots ``(R, n_records, N)``.

    The state array is advanced in place.  This is the fast path used by the
    measurement modules: observables are evaluated afterwards on whole
    blocks of snapshots.
    """
    state = p
    if noise is None:
        if rngs is None:
            rngs, _ = replica_rngs(config.seed, state.shape[0])
        noise = _Noise(rngs, params.n_bonds, config.sweep == "random_sequential")
    record = np.empty((state.shape[0], n_records, state.shape[1]))
    dt = config.micro_step(params.n_sites)
    _advance(state, n_records * stride, params, config, noise, dt, stride, record)
    return record, noise


def make_noise(rngs, params, config):
    return _Noise(rngs, params.n_bonds, config.sweep == "random_sequential")
