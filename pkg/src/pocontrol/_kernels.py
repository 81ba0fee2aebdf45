"""Compiled inner loops for the particle engine."""

from __future__ import annotations

import numpy as np
from numba import njit

from .rng import _block_normals


@njit(cache=True, inline="always", nogil=True)
def _fill_variates(out, start, count, ent, tag, rep, k0, k1):
    # out[c] = variate start + c of the stream; one Philox block per pair.
    c = 0
    if (start & 1) == 1:
        out[0] = _block_normals(start >> 1, ent, tag, rep, k0, k1)[1]
        c = 1
    while c + 1 < count:
        z0, z1 = _block_normals((start + c) >> 1, ent, tag, rep, k0, k1)
        out[c] = z0
        out[c + 1] = z1
        c += 2
    if c < count:
        out[c] = _block_normals((start + c) >> 1, ent, tag, rep, k0, k1)[0]


@njit(cache=True, nogil=True)
def affine_step(X, drift0, cv, cw, B, Dv, Dw, dW, dt, sq_dtf, refine,
                k0, k1, tag, reps, pids, fine_start):
    """One Euler-Maruyama step for affine coefficients, in place.

    ``drift0[r] = b0 + C a_r``, ``cv[r, i] = gamma_v[i] + F_v[i] a_r`` and
    ``cw[r, j]`` likewise, so that for particle ``x`` of replicate ``r``

        x += (drift0[r] + B x) dt + sum_i (cv[r, i] + D_v[i] x) dV_i
             + sum_j (cw[r, j] + D_w[j] x) dW[r, j]

    ``dV_i`` sums ``refine`` fine normals scaled by ``sq_dtf``; fine variate
    ``(fine_start + l) * m + i`` of the particle's stream is used.
    """
    R, N, n = X.shape
    m = Dv.shape[0]
    d = Dw.shape[0]
    x = np.empty(n)
    dv = np.empty(m)
    z = np.empty(refine * m)
    for r in range(R):
        rep = reps[r]
        for p in range(N):
            if m > 0:
                _fill_variates(z, fine_start * m, refine * m, pids[p], tag, rep, k0, k1)
            for i in range(m):
                s = 0.0
                for l in range(refine):
                    s += z[l * m + i]
                dv[i] = s * sq_dtf
            for k in range(n):
                x[k] = X[r, p, k]
            for k in range(n):
                acc = drift0[r, k]
                for l in range(n):
                    acc += B[k, l] * x[l]
                inc = acc * dt
                for i in range(m):
                    s = cv[r, i, k]
                    for l in range(n):
                        s += Dv[i, k, l] * x[l]
                    inc += s * dv[i]
                for j in range(d):
                    s = cw[r, j, k]
                    for l in range(n):
                        s += Dw[j, k, l] * x[l]
                    inc += s * dW[r, j]
                X[r, p, k] = x[k] + inc


@njit(cache=True, nogil=True)
def fine_normals(k0, k1, tag, reps, pids, start, count):
    """Normals ``start .. start+count-1`` of each particle stream, shape (R, N, count)."""
    R = reps.shape[0]
    N = pids.shape[0]
    out = np.empty((R, N, count))
    z = np.empty(count)
    for r in range(R):
        for p in range(N):
            if count > 0:
                _fill_variates(z, start, count, pids[p], tag, reps[r], k0, k1)
            for c in range(count):
                out[r, p, c] = z[c]
    return out


@njit(cache=True, nogil=True)
def cloud_moments(X):
    """Sequential-order mean and variance diagonal of each cloud, shapes (R, n)."""
    R, N, n = X.shape
    mu = np.zeros((R, n))
    var = np.zeros((R, n))
    for r in range(R):
        for p in range(N):
            for k in range(n):
                mu[r, k] += X[r, p, k]
        for k in range(n):
            mu[r, k] /= N
        for p in range(N):
            for k in range(n):
                c = X[r, p, k] - mu[r, k]
                var[r, k] += c * c
        for k in range(n):
            var[r, k] /= N
    return mu, var


@njit(cache=True, nogil=True)
def cloud_quadratic(X, H, g):
    """Per-cloud average of ``x'Hx + g'x``, shape (R,)."""
    R, N, n = X.shape
    out = np.zeros(R)
    for r in range(R):
        acc = 0.0
        for p in range(N):
            for k in range(n):
                t = g[k]
                for l in range(n):
                    t += H[k, l] * X[r, p, l]
                acc += t * X[r, p, k]
        out[r] = acc / N
    return out
