"""Exact 1D fused-lasso solver.

Dynamic programming over piecewise-linear derivative messages: the running
objective's derivative is kept as a sorted list of knots; the min-convolution
with lam*|.| clips it to [-lam, +lam], which only moves the two boundary
knots. Each knot is inserted and removed at most once, so a solve is O(n).
Backtracing through the stored clip positions recovers the unique minimizer
of

    0.5 * sum_t (y_t - u_t)^2  +  lam * sum_t |u_{t+1} - u_t|.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _dp_fused_lasso(y, lam):  # pragma: no cover - exercised through the wrapper
    n = y.shape[0]
    beta = np.empty(n)
    if n == 1 or lam == 0.0:
        for i in range(n):
            beta[i] = y[i]
        return beta

    # Knot positions and the (slope, intercept) increments applied when the
    # active window is crossed from the respective side.
    x = np.empty(2 * n)
    a = np.empty(2 * n)
    b = np.empty(2 * n)
    # Clip positions used by the backtrace.
    tm = np.empty(n - 1)
    tp = np.empty(n - 1)

    tm[0] = y[0] - lam
    tp[0] = y[0] + lam
    lo_idx = n - 1
    hi_idx = n
    x[lo_idx] = tm[0]
    x[hi_idx] = tp[0]
    a[lo_idx] = 1.0
    b[lo_idx] = -y[0] + lam
    a[hi_idx] = -1.0
    b[hi_idx] = y[0] + lam
    afirst = 1.0
    bfirst = -lam - y[1]
    alast = -1.0
    blast = -lam + y[1]

    for k in range(1, n - 1):
        # Walk up from the left until the derivative exceeds -lam.
        alo = afirst
        blo = bfirst
        lo = lo_idx
        while lo <= hi_idx:
            if alo * x[lo] + blo > -lam:
                break
            alo += a[lo]
            blo += b[lo]
            lo += 1
        tm[k] = (-lam - blo) / alo
        lo_idx = lo - 1
        x[lo_idx] = tm[k]

        # Walk down from the right until the derivative drops below +lam.
        ahi = alast
        bhi = blast
        hi = hi_idx
        while hi >= lo_idx:
            if -ahi * x[hi] - bhi < lam:
                break
            ahi += a[hi]
            bhi += b[hi]
            hi -= 1
        tp[k] = (lam + bhi) / (-ahi)
        hi_idx = hi + 1
        x[hi_idx] = tp[k]

        a[lo_idx] = alo
        b[lo_idx] = blo + lam
        a[hi_idx] = ahi
        b[hi_idx] = bhi + lam
        afirst = 1.0
        bfirst = -lam - y[k + 1]
        alast = -1.0
        blast = -lam + y[k + 1]

    # Zero of the final derivative.
    alo = afirst
    blo = bfirst
    lo = lo_idx
    while lo <= hi_idx:
        if alo * x[lo] + blo > 0.0:
            break
        alo += a[lo]
        blo += b[lo]
        lo += 1
    beta[n - 1] = -blo / alo
    for k in range(n - 2, -1, -1):
        if beta[k + 1] > tp[k]:
            beta[k] = tp[k]
        elif beta[k + 1] < tm[k]:
            beta[k] = tm[k]
        else:
            beta[k] = beta[k + 1]
    return beta


def dp_fused_lasso(y: np.ndarray, lam: float) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("y must be a nonempty 1D array")
    if not np.all(np.isfinite(y)):
        raise ValueError("y must be finite")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    return _dp_fused_lasso(y, float(lam))
