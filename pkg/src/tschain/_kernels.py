"""Compiled inner loops (numba) with graceful fallback.

The E-step sweep and both coordinate-descent solvers spend their time in
scalar loops; these kernels mirror the pure-numpy implementations exactly
(same branch structure, same update order) and are selected at import time
when numba is available.  Setting TSCHAIN_DISABLE_NUMBA=1 forces the numpy
paths.
"""

from __future__ import annotations

import math
import os

import numpy as np

HAVE_NUMBA = False
if not os.environ.get("TSCHAIN_DISABLE_NUMBA"):
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - exercised only without numba
        pass

if not HAVE_NUMBA:  # pragma: no cover
    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return deco


_INV_SQRT_2PI = 0.3989422804014327
_INV_SQRT_2 = 0.7071067811865476
_TAIL = 8.0


@njit(cache=True)
def _phi_s(x):
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


@njit(cache=True)
def _Phi_s(x):
    return 0.5 * math.erfc(-x * _INV_SQRT_2)


@njit(cache=True)
def _mills_s(x):
    """Mills ratio (1-Phi)/phi for large positive x via continued fraction."""
    f = x
    for k in range(40, 0, -1):
        f = x + k / f
    return 1.0 / f


@njit(cache=True)
def _ratios_s(a, b):
    """(r1, r2) moment ratios of the standard normal truncated to (a, b).

    Mirrors the vector implementation: reflect right-sided intervals, use the
    Mills form in the deep tail, and take the point-mass limit for vanishing
    mass.  a < b with at most one infinite end.
    """
    reflect = (a + b) > 0.0
    if reflect:
        aa = -b
        bb = -a
    else:
        aa = a
        bb = b
    if bb <= -_TAIL:
        alpha = -bb
        beta = -aa
        if math.isinf(beta):
            ratio = 0.0
            beta_term = 0.0
            m_beta = 0.0
        else:
            ratio = math.exp(0.5 * (alpha * alpha - beta * beta))
            beta_term = beta * ratio
            m_beta = _mills_s(beta)
        denom = _mills_s(alpha) - ratio * m_beta
        r1 = -(1.0 - ratio) / denom
        r2 = (alpha - beta_term) / denom
    else:
        pa = 0.0 if math.isinf(aa) else _phi_s(aa)
        pb = 0.0 if math.isinf(bb) else _phi_s(bb)
        mass = _Phi_s(bb) - _Phi_s(aa)
        if mass <= (pa + pb) * 1e-14:
            mid = 0.5 * (aa + bb)
            r1 = mid
            r2 = mid * mid - 1.0
        else:
            apa = 0.0 if math.isinf(aa) else aa * pa
            bpb = 0.0 if math.isinf(bb) else bb * pb
            r1 = (pa - pb) / mass
            r2 = (apa - bpb) / mass
    if reflect:
        r1 = -r1
    return r1, r2


@njit(cache=True)
def sweep_kernel(M1, M2, lower, upper, kind, rows, sd, gamma, n_sweeps, use_inter):
    """Gauss-Seidel refinement of the latent moment field, in place.

    kind: 0 = truncated, 1 = degenerate point, 2 = free (missing).  Sweep
    order is t ascending then j ascending; samples are independent.  Second
    moments are written on the final sweep; the return value counts cells
    clamped by more than 1e-8.
    """
    n, T, p = M1.shape
    clamped = 0
    pred = np.zeros((n, p))
    for s in range(n_sweeps):
        last = s == n_sweeps - 1
        for t in range(T):
            if use_inter and t > 0:
                for i in range(n):
                    for j in range(p):
                        acc = 0.0
                        for k in range(p):
                            acc += gamma[j, k] * M1[i, t - 1, k]
                        pred[i, j] = acc
            else:
                pred[:, :] = 0.0
            for j in range(p):
                sdj = sd[j]
                var = sdj * sdj
                for i in range(n):
                    kd = kind[i, t, j]
                    if kd == 1:
                        continue
                    mu = pred[i, j]
                    for k in range(p):
                        mu += rows[j, k] * (M1[i, t, k] - pred[i, k])
                    if kd == 2:
                        m1 = mu
                        m2 = mu * mu + var
                    else:
                        aa = (lower[i, t, j] - mu) / sdj
                        bb = (upper[i, t, j] - mu) / sdj
                        r1, r2 = _ratios_s(aa, bb)
                        m1 = mu + sdj * r1
                        m2 = mu * mu + var * (1.0 + r2) + 2.0 * mu * sdj * r1
                    M1[i, t, j] = m1
                    if last:
                        floor = m1 * m1
                        if m2 < floor - 1e-8:
                            clamped += 1
                        M2[i, t, j] = m2 if m2 > floor else floor
    return clamped


@njit(cache=True)
def gamma_cd_kernel(gamma, theta, spp, target, lagged, nu, tol, max_iter):
    """Cyclic soft-threshold coordinate descent for the autoregressive matrix.

    Maintains lagged = gamma @ spp across updates.  Returns (sweeps used,
    converged flag).
    """
    p = gamma.shape[0]
    cur = np.empty(p)
    for it in range(max_iter):
        delta = 0.0
        for j in range(p):
            tjj = theta[j, j]
            for l in range(p):
                acc = 0.0
                for k in range(p):
                    acc += theta[j, k] * lagged[k, l]
                cur[l] = acc
            for l in range(p):
                denom = 2.0 * tjj * spp[l, l]
                g = 2.0 * (target[j, l] - cur[l]) + denom * gamma[j, l]
                mag = abs(g) - nu[j, l]
                new = 0.0
                if mag > 0.0:
                    new = math.copysign(mag, g) / denom
                step = new - gamma[j, l]
                if step != 0.0:
                    gamma[j, l] = new
                    for k in range(p):
                        lagged[j, k] += step * spp[l, k]
                        cur[k] += (tjj * step) * spp[l, k]
                    if abs(step) > delta:
                        delta = abs(step)
        if delta <= tol:
            return it + 1, True
    return max_iter, False


@njit(cache=True)
def lasso_cd_kernel(gram, linear, weights, beta, tol, max_iter):
    """Coordinate descent for 0.5 b'Qb - c'b + sum w|b|, residual maintained."""
    k = beta.size
    resid = linear - gram @ beta
    for _ in range(max_iter):
        delta = 0.0
        for m in range(k):
            old = beta[m]
            qmm = gram[m, m]
            g = resid[m] + qmm * old
            mag = abs(g) - weights[m]
            new = 0.0
            if mag > 0.0:
                new = math.copysign(mag, g) / qmm
            if new != old:
                beta[m] = new
                d = new - old
                for r in range(k):
                    resid[r] -= d * gram[r, m]
                if abs(d) > delta:
                    delta = abs(d)
        if delta <= tol:
            break
    return beta
