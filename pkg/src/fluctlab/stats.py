"""Error bars, autocorrelation times and decay fits shared by the measurement modules."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class StatSeries:
    """Estimates on a lag/time grid with replica standard errors.

    ``extra`` holds auxiliary named columns of the same length as ``grid``
    and ``meta`` any scalar diagnostics (fits, extrapolations).
    """

    grid: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    replicas: int
    seeds: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.atleast_1d(np.asarray(self.grid, dtype=float))
        self.estimates = np.atleast_1d(np.asarray(self.estimates, dtype=float))
        self.stderr = np.atleast_1d(np.asarray(self.stderr, dtype=float))
        if not (self.grid.shape == self.estimates.shape == self.stderr.shape):
            raise ValueError("grid, estimates and stderr must have equal length")
        if not np.all(np.isfinite(self.estimates)):
            raise ValueError("non-finite estimate")
        if np.any(self.stderr < 0) or not np.all(np.isfinite(self.stderr)):
            raise ValueError("standard errors must be finite and nonnegative")

    def __len__(self):
        return self.grid.size

    def rows(self):
        cols = [self.grid, self.estimates, self.stderr]
        cols += [np.asarray(v, dtype=float) for v in self.extra.values()]
        for k in range(len(self)):
            yield [float(c[k]) for c in cols] + [self.replicas]

    def header(self):
        return ["grid", "estimate", "stderr", *self.extra.keys(), "replicas"]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([fmt(v) if isinstance(v, float) else v for v in row])

    def to_record(self):
        return {"grid": self.grid.tolist(), "estimates": self.estimates.tolist(),
                "stderr": self.stderr.tolist(), "replicas": self.replicas,
                "seeds": [str(s) for s in self.seeds],
                "extra": {k: np.asarray(v, dtype=float).tolist() for k, v in self.extra.items()},
                "meta": self.meta}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_record(), fh, indent=2, default=_json_default)


def fmt(x):
    """17 significant digits, enough to round-trip a double."""
    return format(float(x), ".17g")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def jackknife(stat, n):
    """Leave-one-out estimate and standard error of ``stat(index_array)`` over n units."""
    if n < 2:
        raise ValueError("jackknife needs at least two units")
    full = stat(np.arange(n))
    loo = np.array([stat(np.delete(np.arange(n), k)) for k in range(n)])
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return float(full), float(se)


def replica_mean(x, axis=0):
    """Mean and standard error across independent replicas (along ``axis``)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    if n < 2:
        raise ValueError("need at least two replicas for an error bar")
    return x.mean(axis=axis), x.std(axis=axis, ddof=1) / np.sqrt(n)


def batch_means(x, n_batches=20):
    """Mean and batch-means standard error of a correlated 1-D series."""
    x = np.asarray(x, dtype=float)
    b = x.size // n_batches
    if b < 1:
        raise ValueError("series shorter than the number of batches")
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(x.mean()), float(means.std(ddof=1) / np.sqrt(n_batches))


def autocorrelation(x):
    """Normalized autocorrelation function of a 1-D series (FFT, biased estimator)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acf = np.fft.irfft(f * np.conj(f), m)[:n]
    return acf / acf[0] if acf[0] > 0 else np.zeros(n)


def integrated_autocorr_time(x, c=5.0):
    """tau_int = 1 + 2 sum_t rho(t), with Sokal's self-consistent window M >= c tau.

    ``x`` may be 1-D or ``(replicas, n)``; replicas share one averaged ACF.
    """
    x = np.asarray(x, dtype=float)
    rho = autocorrelation(x) if x.ndim == 1 else np.mean([autocorrelation(r) for r in x], axis=0)
    return sokal_window(rho, c)


def sokal_window(rho, c=5.0):
    """(tau_int, window) from a normalized autocorrelation function ``rho``."""
    taus = 2.0 * np.cumsum(rho) - 1.0
    m = np.arange(taus.size)
    ok = m >= c * taus
    window = int(np.argmax(ok)) if np.any(ok) else taus.size - 1
    return float(taus[window]), window


def exponential_tail_time(rho, start=1, floor=0.05):
    """Exponential autocorrelation time from a log-linear fit to rho(t) > ``floor``."""
    rho = np.asarray(rho, dtype=float)
    t = np.arange(rho.size)
    sel = (t >= start) & (rho > floor)
    stop = np.argmax(~sel[start:]) + start if np.any(~sel[start:]) else rho.size
    sel &= t < stop
    if sel.sum() < 2:
        raise ValueError("autocorrelation decays too fast for a tail fit")
    slope = np.polyfit(t[sel], np.log(rho[sel]), 1)[0]
    return float(-1.0 / slope)


@dataclass
class DecayFit:
    rate: float
    rate_stderr: float
    amplitude: float
    amplitude_stderr: float
    points: int


def fit_exponential_decay(lags, values, stderr):
    """Weighted least squares of log(values) = log(A) - rate * lag.

    Points with nonpositive values or relative error above 0.5 are skipped
    (the log transform is meaningless there).  Weights are 1/var of log(values).
    """
    lags = np.asarray(lags, dtype=float)
    values = np.asarray(values, dtype=float)
    stderr = np.asarray(stderr, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(values > 0, stderr / values, np.inf)
    sel = (values > 0) & (rel < 0.5)
    if sel.sum() < 2:
        raise ValueError("fewer than two usable points for the decay fit")
    x, yv = lags[sel], np.log(values[sel])
    w = 1.0 / np.maximum(rel[sel], 1e-300) ** 2
    X = np.column_stack([np.ones_like(x), -x])
    A = X.T @ (w[:, None] * X)
    beta = np.linalg.solve(A, X.T @ (w * yv))
    cov = np.linalg.inv(A)
    resid = yv - X @ beta
    dof = max(sel.sum() - 2, 1)
    chi2 = float(np.sum(w * resid**2) / dof)
    cov = cov * max(chi2, 1.0)
    amp = float(np.exp(beta[0]))
    return DecayFit(float(beta[1]), float(np.sqrt(cov[1, 1])), amp,
                    float(amp * np.sqrt(cov[0, 0])), int(sel.sum()))


def linear_fit(x, y, sigma=None):
    """Weighted straight line y = a + b x; returns (a, b, cov)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if sigma is None else 1.0 / np.asarray(sigma, dtype=float) ** 2
    X = np.column_stack([np.ones_like(x), x])
    A = X.T @ (w[:, None] * X)
    beta = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    if sigma is None:
        resid = y - X @ beta
        cov = cov * float(np.sum(resid**2) / max(x.size - 2, 1))
    return float(beta[0]), float(beta[1]), cov
