"""Compiled bond-rotation sweeps.

Couplings are passed by code: 0 is constant ``c0``; 1 is the Gaussian bump
``1 + c0 exp(-(r^2+s^2)/(2 c1))`` with ``c1 = width^2``.
"""

import math

import numpy as np
from numba import njit

CONSTANT = 0
GAUSSIAN_BUMP = 1


@njit(cache=True, inline="always")
def _coupling(kind, c0, c1, r, s):
    if kind == CONSTANT:
        return c0, 0.0
    e = c0 * math.exp(-(r * r + s * s) / (2.0 * c1))
    a = 1.0 + e
    # d/dtheta a(rho cos t, rho sin t) = -s a_r + r a_s
    da_r = -r / c1 * e
    da_s = -s / c1 * e
    return a, -s * da_r + r * da_s


@njit(cache=True, nogil=True)
def sweep_block(p, normals, orders, n_sweeps, sweep_offset, periodic, dt, kind, c0, c1,
                stability, record_every, phase, out, rec_offset):
    """Advance every replica by ``n_sweeps`` sweeps.

    ``normals[r, t, k]`` drives the k-th update of sweep t; ``orders[r, t, k]``
    names its bond (a single row is broadcast when ``orders.shape[0] == 1``).
    Snapshots go to ``out[r, rec_offset + j]`` whenever ``phase + t + 1`` is
    a multiple of ``record_every`` (``phase`` counts sweeps already taken
    since the last snapshot).  Returns ``(replica, bond, drift_step)`` of the first unstable
    update, or ``(-1, -1, 0.0)``.
    """
    R, N = p.shape
    nb = orders.shape[2]
    shared = orders.shape[0] == 1
    sq = math.sqrt(dt)
    for r in range(R):
        rec = rec_offset
        for t in range(n_sweeps):
            tt = sweep_offset + t
            for k in range(nb):
                if shared:
                    x = orders[0, 0, k]
                else:
                    x = orders[r, tt, k]
                y = x + 1
                if y == N:
                    if not periodic:
                        continue
                    y = 0
                u = p[r, x]
                v = p[r, y]
                if u == 0.0 and v == 0.0:
                    continue
                a, da = _coupling(kind, c0, c1, u, v)
                drift = 0.5 * da * dt
                if abs(drift) > stability:
                    return r, x, drift
                d = drift + math.sqrt(a) * sq * normals[r, tt, k]
                cs = math.cos(d)
                sn = math.sin(d)
                p[r, x] = u * cs - v * sn
                p[r, y] = u * sn + v * cs
            if record_every > 0 and (phase + t + 1) % record_every == 0:
                for i in range(N):
                    out[r, rec, i] = p[r, i]
                rec += 1
    return -1, -1, 0.0


@njit(cache=True, nogil=True)
def kac_block(x, pairs_i, pairs_j, angles):
    """Apply a sequence of Kac rotations to one point, in place."""
    for k in range(angles.shape[0]):
        i = pairs_i[k]
        j = pairs_j[k]
        c = math.cos(angles[k])
        s = math.sin(angles[k])
        u = x[i]
        v = x[j]
        # clockwise rotation in the (i, j) plane
        x[i] = c * u + s * v
        x[j] = -s * u + c * v


def empty_out():
    return np.zeros((1, 1, 1))


@njit(cache=True, nogil=True)
def poly_translates(p, offsets, idx, exps, coefs, max_exp, out):
    """out[m, x] += sum_t coefs[t] prod_k p[m, x + offsets[idx[t, k]]] ** exps[t, k] (periodic).

    Terms are stored sparsely: ``idx[t, k]`` indexes ``offsets`` and
    ``exps[t, k]`` is its power (0 pads unused slots).
    """
    M, N = p.shape
    T, K = idx.shape
    S = offsets.shape[0]
    tab = np.empty((S, max_exp + 1))
    for m in range(M):
        for x in range(N):
            for s in range(S):
                q = p[m, (x + offsets[s]) % N]
                tab[s, 0] = 1.0
                for e in range(1, max_exp + 1):
                    tab[s, e] = tab[s, e - 1] * q
            tot = 0.0
            for t in range(T):
                v = coefs[t]
                for k in range(K):
                    v *= tab[idx[t, k], exps[t, k]]
                tot += v
            out[m, x] += tot
