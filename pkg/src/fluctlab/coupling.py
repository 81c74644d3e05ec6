"""Exchange-rate functions a(r, s) for the bond noise.

A coupling is a smooth function of the two velocities sharing a bond,
bounded between two positive constants.  Both built-ins are even in each
argument and symmetric under r <-> s.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True, eq=False)
class CouplingSpec:
    """A bond coupling with analytic first partials and certified bounds.

    Parameters
    ----------
    eval, d_r, d_s : callable
        Vectorized ``(r, s) -> array`` for a, da/dr and da/ds.
    lower, upper : float
        Bounds ``0 < lower <= a <= upper``.
    derivative_bound : float
        Bound on ``|da/dr|`` and ``|da/ds|``.
    kind : str
        ``"constant"``, ``"gaussian_bump"`` or ``"custom"``.  The first two
        run on the compiled integrator.
    params : dict
        Parameters needed to rebuild a built-in coupling from a config.
    """

    eval: Callable
    d_r: Callable
    d_s: Callable
    lower: float
    upper: float
    derivative_bound: float
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lower > 0:
            raise ValueError(f"coupling lower bound must be positive, got {self.lower}")
        if self.upper < self.lower:
            raise ValueError("coupling upper bound below lower bound")

    def __call__(self, r, s):
        return self.eval(r, s)

    @property
    def is_constant(self):
        return self.kind == "constant"

    def angular_derivative(self, r, s):
        """Derivative of a(rho cos t, rho sin t) in t, i.e. ``-s a_r + r a_s``."""
        return -s * self.d_r(r, s) + r * self.d_s(r, s)

    def to_config(self):
        if self.kind == "custom":
            raise ValueError("custom couplings cannot be serialized")
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        kind = cfg.pop("kind")
        if kind == "constant":
            return constant(**cfg)
        if kind == "gaussian_bump":
            return gaussian_bump(**cfg)
        raise ValueError(f"unknown coupling kind {kind!r}")

    def check_bounds(self, rng, n=10_000, scale=3.0):
        """Spot-check ``lower <= a <= upper`` on random inputs."""
        r, s = scale * rng.standard_normal((2, n))
        a = self.eval(r, s)
        return bool(np.all(a >= self.lower - 1e-15) and np.all(a <= self.upper + 1e-15))


def constant(a0=1.0):
    """The gradient model a == a0."""
    a0 = float(a0)
    if a0 <= 0:
        raise ValueError("a0 must be positive")

    def ev(r, s):
        return np.full(np.broadcast(r, s).shape, a0) if np.ndim(r) or np.ndim(s) else a0

    def zero(r, s):
        return np.zeros(np.broadcast(r, s).shape) if np.ndim(r) or np.ndim(s) else 0.0

    return CouplingSpec(ev, zero, zero, a0, a0, 0.0, kind="constant", params={"a0": a0})


def gaussian_bump(eps=0.5, width=1.0):
    """a(r, s) = 1 + eps * exp(-(r^2 + s^2) / (2 width^2)), with 0 < eps < 1."""
    eps = float(eps)
    width = float(width)
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if width <= 0:
        raise ValueError("width must be positive")
    w2 = width * width

    def ev(r, s):
        return 1.0 + eps * np.exp(-(r * r + s * s) / (2 * w2))

    def d_r(r, s):
        return -eps * r / w2 * np.exp(-(r * r + s * s) / (2 * w2))

    def d_s(r, s):
        return -eps * s / w2 * np.exp(-(r * r + s * s) / (2 * w2))

    # max over r of r e^{-r^2/2w^2} / w^2 is 1 / (w sqrt(e))
    dbound = eps / (width * np.sqrt(np.e))
    return CouplingSpec(ev, d_r, d_s, 1.0, 1.0 + eps, dbound,
                        kind="gaussian_bump", params={"eps": eps, "width": width})
