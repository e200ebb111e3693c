"""Hot inner loops with two interchangeable backends.

Each kernel exists as a numba ``@njit`` function and a pure-numpy function
computing the same arithmetic in the same order.  The public names
(:func:`correlate_valid`, :func:`correlate_periodic`,
:func:`solve_cyclic_tridiagonal`) dispatch to numba unless the environment
variable ``PHYSCP_DISABLE_NUMBA`` is set to a truthy value at import time,
or numba is not importable.

Stencil taps are applied in "differenced" form::

    out[i] = total * f[i] + sum_o c_o * (f[i + o] - f[i])

which equals ``sum_o c_o f[i + o]`` when ``total == sum_o c_o`` but returns an
exact zero on constant input whenever the weights sum to zero.
"""
from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("PHYSCP_DISABLE_NUMBA", "").strip().lower()
try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True)(fn)


# ---------------------------------------------------------------------------
# stencil correlation on (batch, n0, n1, n2) arrays


def correlate_valid_numpy(f, offsets, coefs, total, radii):
    n0, n1, n2 = f.shape[1:]
    r0, r1, r2 = radii
    fc = f[:, r0:n0 - r0, r1:n1 - r1, r2:n2 - r2]
    out = total * fc
    for k in range(offsets.shape[0]):
        o0, o1, o2 = offsets[k]
        fs = f[:, r0 + o0:n0 - r0 + o0, r1 + o1:n1 - r1 + o1, r2 + o2:n2 - r2 + o2]
        out += coefs[k] * (fs - fc)
    return out


def correlate_periodic_numpy(f, offsets, coefs, total, radii):
    out = total * f
    for k in range(offsets.shape[0]):
        o0, o1, o2 = offsets[k]
        fs = np.roll(f, (-o0, -o1, -o2), axis=(1, 2, 3))
        out += coefs[k] * (fs - f)
    return out


@_njit
def correlate_valid_numba(f, offsets, coefs, total, radii):
    nb, n0, n1, n2 = f.shape
    r0, r1, r2 = radii[0], radii[1], radii[2]
    m0, m1, m2 = n0 - 2 * r0, n1 - 2 * r1, n2 - 2 * r2
    ntap = offsets.shape[0]
    out = np.empty((nb, m0, m1, m2))
    for b in range(nb):
        for i in range(m0):
            for j in range(m1):
                for k in range(m2):
                    fc = f[b, i + r0, j + r1, k + r2]
                    acc = total * fc
                    for t in range(ntap):
                        fs = f[b, i + r0 + offsets[t, 0], j + r1 + offsets[t, 1], k + r2 + offsets[t, 2]]
                        acc += coefs[t] * (fs - fc)
                    out[b, i, j, k] = acc
    return out


@_njit
def correlate_periodic_numba(f, offsets, coefs, total, radii):
    nb, n0, n1, n2 = f.shape
    ntap = offsets.shape[0]
    out = np.empty((nb, n0, n1, n2))
    for b in range(nb):
        for i in range(n0):
            for j in range(n1):
                for k in range(n2):
                    fc = f[b, i, j, k]
                    acc = total * fc
                    for t in range(ntap):
                        fs = f[b, (i + offsets[t, 0]) % n0, (j + offsets[t, 1]) % n1,
                               (k + offsets[t, 2]) % n2]
                        acc += coefs[t] * (fs - fc)
                    out[b, i, j, k] = acc
    return out


# ---------------------------------------------------------------------------
# cyclic tridiagonal systems, one matrix, many right-hand sides (rows of rhs)
#
#   row 0:     b x0 + c x1 + beta x_{n-1}
#   row i:     a x_{i-1} + b x_i + c x_{i+1}
#   row n-1:   alpha x0 + a x_{n-2} + b x_{n-1}


def _thomas_numpy(a, b, c, d):
    n = b.shape[0]
    cp = np.empty(n)
    dp = np.empty_like(d)
    cp[0] = c[0] / b[0]
    dp[:, 0] = d[:, 0] / b[0]
    for i in range(1, n):
        m = b[i] - a[i] * cp[i - 1]
        cp[i] = c[i] / m
        dp[:, i] = (d[:, i] - a[i] * dp[:, i - 1]) / m
    x = np.empty_like(d)
    x[:, n - 1] = dp[:, n - 1]
    for i in range(n - 2, -1, -1):
        x[:, i] = dp[:, i] - cp[i] * x[:, i + 1]
    return x


def solve_cyclic_tridiagonal_numpy(a, b, c, alpha, beta, rhs):
    n = rhs.shape[1]
    av = np.full(n, a)
    cv = np.full(n, c)
    bb = np.full(n, b, dtype=np.float64)
    gamma = -b
    bb[0] = b - gamma
    bb[n - 1] = b - alpha * beta / gamma
    x = _thomas_numpy(av, bb, cv, rhs)
    u = np.zeros((1, n))
    u[0, 0] = gamma
    u[0, n - 1] = alpha
    z = _thomas_numpy(av, bb, cv, u)[0]
    fact = (x[:, 0] + beta * x[:, n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma)
    return x - fact[:, None] * z[None, :]


@_njit
def _thomas_numba(a, b, c, d):
    nr, n = d.shape
    cp = np.empty(n)
    dp = np.empty((nr, n))
    x = np.empty((nr, n))
    cp[0] = c[0] / b[0]
    for r in range(nr):
        dp[r, 0] = d[r, 0] / b[0]
    for i in range(1, n):
        m = b[i] - a[i] * cp[i - 1]
        cp[i] = c[i] / m
        for r in range(nr):
            dp[r, i] = (d[r, i] - a[i] * dp[r, i - 1]) / m
    for r in range(nr):
        x[r, n - 1] = dp[r, n - 1]
        for i in range(n - 2, -1, -1):
            x[r, i] = dp[r, i] - cp[i] * x[r, i + 1]
    return x


@_njit
def solve_cyclic_tridiagonal_numba(a, b, c, alpha, beta, rhs):
    nr, n = rhs.shape
    av = np.full(n, a)
    cv = np.full(n, c)
    bb = np.full(n, b)
    gamma = -b
    bb[0] = b - gamma
    bb[n - 1] = b - alpha * beta / gamma
    x = _thomas_numba(av, bb, cv, rhs)
    u = np.zeros((1, n))
    u[0, 0] = gamma
    u[0, n - 1] = alpha
    z = _thomas_numba(av, bb, cv, u)[0]
    denom = 1.0 + z[0] + beta * z[n - 1] / gamma
    out = np.empty((nr, n))
    for r in range(nr):
        fact = (x[r, 0] + beta * x[r, n - 1] / gamma) / denom
        for i in range(n):
            out[r, i] = x[r, i] - fact * z[i]
    return out


if USE_NUMBA:
    correlate_valid = correlate_valid_numba
    correlate_periodic = correlate_periodic_numba
    solve_cyclic_tridiagonal = solve_cyclic_tridiagonal_numba
else:
    correlate_valid = correlate_valid_numpy
    correlate_periodic = correlate_periodic_numpy
    solve_cyclic_tridiagonal = solve_cyclic_tridiagonal_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
