"""
Spheres, ensembles and relaxation
=================================

At fixed total energy the dynamics lives on a sphere.  Expectations there
agree with the Gaussian product measure up to O(1/N), and the slowest
relaxation of a nearest-neighbour exchange takes a time of order N^2,
while the mean-field Kac walk needs only O(N) rotations.
"""

import numpy as np

from fluctlab import constant
from fluctlab.polynomial import LocalFunction as LF
from fluctlab.spectral import (kac_expected_time, kac_relaxation_time, probe_rate,
                               relaxation_scaling)
from fluctlab.spheres import SphereSpec, ensemble_gap, loglog_slope, moment_closed_form

# closed-form moments on S^{n-1}(r): E[x_0^2] = r^2 / n
spec = SphereSpec(5, 2.0)
print("E[x0^2] on S^4(2):", moment_closed_form([1, 0, 0, 0, 0], spec)[1], "=", 4 / 5)

# N * |E_sphere - E_gauss| levels off: the gap itself is O(1/N)
ns = np.array([8, 16, 32, 64, 128, 256])
g = LF.var(0) ** 2 * LF.var(1) ** 2
gaps = [ensemble_gap(g, n, 1.0)[0] for n in ns]
print("scaled gaps:", np.round(gaps, 4), " log-log slope:", round(loglog_slope(ns, gaps), 3))

# Kac walk: one Fourier probe decorrelates in about N - 1 rotation events
# (N - 3/2 when sampled after every event)
m, se = kac_relaxation_time(8, replicas=16, seed=1)
print(f"Kac, N = 8: {m:.2f} +- {se:.2f} events (expected {kac_expected_time(8):.2f})")

# nearest-neighbour exchange: the same probe needs a time of order N^2
series, fit = relaxation_scaling([4, 8, 16], 1.0, constant(), replicas=16, seed=2)
for N, tau in zip(series.grid, series.estimates):
    print(f"N = {int(N):3d}: tau = {tau:7.3f}   exact mode time {1 / probe_rate(int(N)):7.3f}")
print(f"fitted exponent {fit.alpha:.2f} in [{fit.ci_low:.2f}, {fit.ci_high:.2f}]")
