"""Compiled recurrence kernels for scan operations.

The sequential recurrences here are the only parts of the engine that cannot
be vectorized with numpy. They are jitted with numba when available and fall
back to plain Python loops otherwise; both paths perform the identical
sequence of IEEE multiply/add operations per state element, so results are
bit-identical across paths.
"""

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap

    prange = range


@njit(cache=True, parallel=True)
def scan_forward(a, b, h):
    """h[t] = a[t] * h[t-1] + b[t] along axis 0, h[-1] = 0. Shapes (L, m)."""
    L, m = a.shape
    for j in prange(m):
        acc = 0.0
        for t in range(L):
            acc = a[t, j] * acc + b[t, j]
            h[t, j] = acc


@njit(cache=True, parallel=True)
def scan_backward(a, h, g, da, db):
    """Reverse-time adjoint of scan_forward. All shapes (L, m)."""
    L, m = a.shape
    for j in prange(m):
        carry = 0.0
        for t in range(L - 1, -1, -1):
            tot = g[t, j] + carry
            if t > 0:
                da[t, j] = tot * h[t - 1, j]
            else:
                da[t, j] = 0.0
            db[t, j] = tot
            carry = a[t, j] * tot


@njit(cache=True, parallel=True)
def sscan_forward(delta, A, Bm, Cm, x, y, h):
    """Fused ZOH discretization + state recurrence + output contraction.

    delta, x: (B, L, C); A: (C, N); Bm, Cm: (B, L, N).
    Writes y (B, L, C) and the saved state trajectory h (B, L, C, N); the
    discretized transition is cheap to recompute, so it is not stored.
    """
    Bb, L, C = delta.shape
    N = A.shape[1]
    for bc in prange(Bb * C):
        b = bc // C
        c = bc % C
        state = np.zeros(N)
        for t in range(L):
            d = delta[b, t, c]
            xv = x[b, t, c]
            acc = 0.0
            for n in range(N):
                an = A[c, n]
                ab = np.exp(d * an)
                bu = ((ab - 1.0) / an) * Bm[b, t, n] * xv
                s = ab * state[n] + bu
                state[n] = s
                h[b, t, c, n] = s
                acc += Cm[b, t, n] * s
            y[b, t, c] = acc


@njit(cache=True, parallel=True)
def sscan_backward(delta, A, Bm, Cm, x, h, gy, ddelta, dApart, dB, dC, dx):
    """Adjoint of sscan_forward.

    dApart is (B, C, N); the caller sums it over the batch axis. dB and dC
    accumulate over channels, so parallelism is over the batch axis only.
    """
    Bb, L, C = delta.shape
    N = A.shape[1]
    for b in prange(Bb):
        gh = np.zeros(N)
        for c in range(C):
            for n in range(N):
                gh[n] = 0.0
            for t in range(L - 1, -1, -1):
                g = gy[b, t, c]
                d = delta[b, t, c]
                xv = x[b, t, c]
                dd = 0.0
                dxv = 0.0
                for n in range(N):
                    an = A[c, n]
                    ab = np.exp(d * an)
                    w = (ab - 1.0) / an
                    bn = Bm[b, t, n]
                    if t > 0:
                        hprev = h[b, t - 1, c, n]
                    else:
                        hprev = 0.0
                    ghn = g * Cm[b, t, n] + gh[n]
                    dC[b, t, n] += g * h[b, t, c, n]
                    dabar = ghn * hprev
                    dd += dabar * ab * an + ghn * ab * bn * xv
                    dApart[b, c, n] += (
                        dabar * ab * d
                        + ghn * ((ab * d * an - (ab - 1.0)) / (an * an)) * bn * xv
                    )
                    dB[b, t, n] += ghn * w * xv
                    dxv += ghn * w * bn
                    gh[n] = ab * ghn
                ddelta[b, t, c] = dd
                dx[b, t, c] = dxv
