"""Compiled Kalman recursion for a stationary ARMA process in Harvey form.

State transition T has the AR coefficients in its first column and ones on
the superdiagonal; the disturbance loading is R = (1, b_1, ..., b_{r-1}).
The innovation variance is normalised to one, so the returned prediction
variances F_t are relative to sigma^2.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def arma_filter(y, a, R, P0, tol):
    """Filter every column of ``y`` (n x k) through the same ARMA model.

    Returns (innovations n x k, F n, predicted state r x k for time n+1,
    ok flag).  The covariance recursion is shared by all columns and is
    frozen once it stops moving by more than ``tol``.
    """
    n, k = y.shape
    r = a.size
    A = np.zeros((r, k))
    P = P0.copy()
    Pn = np.empty((r, r))
    M = np.empty((r, r))
    pc = np.empty(r)
    v = np.empty((n, k))
    F = np.empty(n)
    frozen = False
    for t in range(n):
        f = P[0, 0]
        if not (f > 0.0) or not np.isfinite(f):
            return v, F, A, False
        F[t] = f
        for i in range(r):
            pc[i] = P[i, 0]
        for c in range(k):
            e = y[t, c] - A[0, c]
            v[t, c] = e
            g = e / f
            for i in range(r):
                A[i, c] += pc[i] * g
            a0 = A[0, c]
            for i in range(r - 1):
                A[i, c] = a[i] * a0 + A[i + 1, c]
            A[r - 1, c] = a[r - 1] * a0
        if frozen:
            continue
        # measurement update of the covariance
        for i in range(r):
            for j in range(r):
                P[i, j] -= pc[i] * pc[j] / f
        # M = T P
        for j in range(r):
            p0j = P[0, j]
            for i in range(r - 1):
                M[i, j] = a[i] * p0j + P[i + 1, j]
            M[r - 1, j] = a[r - 1] * p0j
        # Pn = M T' + R R'
        delta = 0.0
        for i in range(r):
            mi0 = M[i, 0]
            for j in range(r - 1):
                Pn[i, j] = mi0 * a[j] + M[i, j + 1] + R[i] * R[j]
            Pn[i, r - 1] = mi0 * a[r - 1] + R[i] * R[r - 1]
        for i in range(r):
            for j in range(r):
                dd = abs(Pn[i, j] - P[i, j] - pc[i] * pc[j] / f)
                if dd > delta:
                    delta = dd
                P[i, j] = Pn[i, j]
        if delta < tol:
            frozen = True
    return v, F, A, True


@njit(cache=True)
def arma_forecast_state(A, a, h):
    """First state element of T^j A for j = 0..h-1 (column 0 of A)."""
    r = a.size
    s = A[:, 0].copy()
    out = np.empty(h)
    for j in range(h):
        out[j] = s[0]
        s0 = s[0]
        for i in range(r - 1):
            s[i] = a[i] * s0 + s[i + 1]
        s[r - 1] = a[r - 1] * s0
    return out
