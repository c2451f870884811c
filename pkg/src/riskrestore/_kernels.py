"""Hot inner loops of the simplex engine.

Every kernel exists twice: a numba ``@njit`` version and a vectorised numpy
version with identical tie-breaking, so both paths pivot the same way.
Set ``RISKRESTORE_NO_NUMBA=1`` (or run without numba installed) to force the
numpy path.
"""

from __future__ import annotations

import os

import numpy as np

# nonbasic status codes
AT_LOWER = 0
AT_UPPER = 1
AT_ZERO = 2  # free nonbasic, parked at 0
BASIC = 3

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("RISKRESTORE_NO_NUMBA", "0") not in ("1", "true", "yes")


# --------------------------------------------------------------------------
# numpy reference path
# --------------------------------------------------------------------------

def _np_price(d, status, tol, bland):
    """Pick an entering column for the primal simplex, or -1 when optimal."""
    viol = np.zeros_like(d)
    lo = status == AT_LOWER
    up = status == AT_UPPER
    fr = status == AT_ZERO
    viol[lo] = np.maximum(-d[lo], 0.0)
    viol[up] = np.maximum(d[up], 0.0)
    viol[fr] = np.abs(d[fr])
    cand = viol > tol
    if not cand.any():
        return -1
    if bland:
        return int(np.flatnonzero(cand)[0])
    return int(np.argmax(np.where(cand, viol, -1.0)))


def _np_primal_ratio(xb, lbb, ubb, alpha, direction, tol, pivtol):
    """Harris two-pass ratio test.

    Basic variables move as ``xb - t * direction * alpha``. Returns
    ``(row, step, hits_upper)``; ``row == -1`` means no basic variable
    blocks (step is ``inf``).
    """
    g = direction * alpha
    dec = g > pivtol  # basic decreases toward its lower bound
    inc = g < -pivtol  # basic increases toward its upper bound
    dec &= np.isfinite(lbb)
    inc &= np.isfinite(ubb)
    if not (dec.any() or inc.any()):
        return -1, np.inf, False
    with np.errstate(divide="ignore", invalid="ignore"):
        relaxed = np.full(g.shape, np.inf)
        relaxed[dec] = (xb[dec] - lbb[dec] + tol) / g[dec]
        relaxed[inc] = (ubb[inc] - xb[inc] + tol) / -g[inc]
    tmax = relaxed.min()
    exact = np.full(g.shape, np.inf)
    exact[dec] = (xb[dec] - lbb[dec]) / g[dec]
    exact[inc] = (ubb[inc] - xb[inc]) / -g[inc]
    ok = (exact <= tmax) & (dec | inc)
    mag = np.where(ok, np.abs(g), -1.0)
    row = int(np.argmax(mag))
    step = max(exact[row], 0.0)
    return row, step, bool(inc[row])


def _np_dual_ratio(d, arow, status, sign, tol, pivtol, bland=False):
    """Harris two-pass ratio test of the dual simplex.

    ``sign`` is +1 when the leaving basic must increase, -1 when it must
    decrease. Returns the entering column or -1 (primal infeasible). With
    ``bland`` the exact minimum ratio is used and ties go to the lowest index.
    """
    a = sign * arow
    lo = (status == AT_LOWER) & (a < -pivtol)
    up = (status == AT_UPPER) & (a > pivtol)
    fr = (status == AT_ZERO) & (np.abs(a) > pivtol)
    cand = lo | up | fr
    if not cand.any():
        return -1
    dd = np.abs(d)
    dd = np.where(lo, np.maximum(d, 0.0), dd)
    dd = np.where(up, np.maximum(-d, 0.0), dd)
    absa = np.abs(a)
    if bland:
        with np.errstate(divide="ignore", invalid="ignore"):
            exact = np.where(cand, dd / absa, np.inf)
        return int(np.flatnonzero(exact <= exact.min())[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        relaxed = np.where(cand, (dd + tol) / absa, np.inf)
        tmax = relaxed.min()
        exact = np.where(cand, dd / absa, np.inf)
    ok = cand & (exact <= tmax)
    return int(np.argmax(np.where(ok, absa, -1.0)))


def _np_ftran_etas(x, eta_rows, eta_vals, count):
    for k in range(count):
        r = eta_rows[k]
        u = eta_vals[k]
        xr = x[r] / u[r]
        x -= xr * u
        x[r] = xr
    return x


def _np_btran_etas(y, eta_rows, eta_vals, count):
    for k in range(count - 1, -1, -1):
        r = eta_rows[k]
        u = eta_vals[k]
        s = u @ y - u[r] * y[r]
        y[r] = (y[r] - s) / u[r]
    return y


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_price(d, status, tol, bland):
        best = -1
        bestv = tol
        for j in range(d.shape[0]):
            s = status[j]
            if s == AT_LOWER:
                v = -d[j]
            elif s == AT_UPPER:
                v = d[j]
            elif s == AT_ZERO:
                v = abs(d[j])
            else:
                continue
            if v > tol:
                if bland:
                    return j
                if v > bestv:
                    best = j
                    bestv = v
        return best

    @njit(cache=True)
    def _nb_primal_ratio(xb, lbb, ubb, alpha, direction, tol, pivtol):
        m = xb.shape[0]
        tmax = np.inf
        for i in range(m):
            g = direction * alpha[i]
            if g > pivtol and np.isfinite(lbb[i]):
                t = (xb[i] - lbb[i] + tol) / g
                if t < tmax:
                    tmax = t
            elif g < -pivtol and np.isfinite(ubb[i]):
                t = (ubb[i] - xb[i] + tol) / -g
                if t < tmax:
                    tmax = t
        if tmax == np.inf:
            return -1, np.inf, False
        row = -1
        bestmag = -1.0
        step = 0.0
        up = False
        for i in range(m):
            g = direction * alpha[i]
            if g > pivtol and np.isfinite(lbb[i]):
                t = (xb[i] - lbb[i]) / g
                if t <= tmax and abs(g) > bestmag:
                    bestmag = abs(g)
                    row = i
                    step = t
                    up = False
            elif g < -pivtol and np.isfinite(ubb[i]):
                t = (ubb[i] - xb[i]) / -g
                if t <= tmax and abs(g) > bestmag:
                    bestmag = abs(g)
                    row = i
                    step = t
                    up = True
        if step < 0.0:
            step = 0.0
        return row, step, up

    @njit(cache=True)
    def _nb_dual_ratio(d, arow, status, sign, tol, pivtol, bland=False):
        n = d.shape[0]
        if bland:
            best = -1
            bestt = np.inf
            for j in range(n):
                a = sign * arow[j]
                s = status[j]
                if s == AT_LOWER and a < -pivtol:
                    dd = max(d[j], 0.0)
                elif s == AT_UPPER and a > pivtol:
                    dd = max(-d[j], 0.0)
                elif s == AT_ZERO and abs(a) > pivtol:
                    dd = abs(d[j])
                else:
                    continue
                t = dd / abs(a)
                if t < bestt:
                    bestt = t
                    best = j
            return best
        tmax = np.inf
        for j in range(n):
            a = sign * arow[j]
            s = status[j]
            if s == AT_LOWER and a < -pivtol:
                dd = max(d[j], 0.0)
            elif s == AT_UPPER and a > pivtol:
                dd = max(-d[j], 0.0)
            elif s == AT_ZERO and abs(a) > pivtol:
                dd = abs(d[j])
            else:
                continue
            t = (dd + tol) / abs(a)
            if t < tmax:
                tmax = t
        if tmax == np.inf:
            return -1
        best = -1
        bestmag = -1.0
        for j in range(n):
            a = sign * arow[j]
            s = status[j]
            if s == AT_LOWER and a < -pivtol:
                dd = max(d[j], 0.0)
            elif s == AT_UPPER and a > pivtol:
                dd = max(-d[j], 0.0)
            elif s == AT_ZERO and abs(a) > pivtol:
                dd = abs(d[j])
            else:
                continue
            if dd / abs(a) <= tmax and abs(a) > bestmag:
                bestmag = abs(a)
                best = j
        return best

    @njit(cache=True)
    def _nb_ftran_etas(x, eta_rows, eta_vals, count):
        m = x.shape[0]
        for k in range(count):
            r = eta_rows[k]
            xr = x[r] / eta_vals[k, r]
            if xr != 0.0:
                for i in range(m):
                    x[i] -= xr * eta_vals[k, i]
            x[r] = xr
        return x

    @njit(cache=True)
    def _nb_btran_etas(y, eta_rows, eta_vals, count):
        m = y.shape[0]
        for k in range(count - 1, -1, -1):
            r = eta_rows[k]
            s = 0.0
            for i in range(m):
                if i != r:
                    s += eta_vals[k, i] * y[i]
            y[r] = (y[r] - s) / eta_vals[k, r]
        return y


def select(use_numba: bool | None = None):
    """Return the kernel namespace for the requested path."""
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba and not HAVE_NUMBA:
        raise RuntimeError("numba requested but not importable")
    if use_numba:
        return _Kernels(_nb_price, _nb_primal_ratio, _nb_dual_ratio, _nb_ftran_etas, _nb_btran_etas, True)
    return _Kernels(_np_price, _np_primal_ratio, _np_dual_ratio, _np_ftran_etas, _np_btran_etas, False)


class _Kernels:
    __slots__ = ("price", "primal_ratio", "dual_ratio", "ftran_etas", "btran_etas", "numba")

    def __init__(self, price, primal_ratio, dual_ratio, ftran_etas, btran_etas, numba):
        self.price = price
        self.primal_ratio = primal_ratio
        self.dual_ratio = dual_ratio
        self.ftran_etas = ftran_etas
        self.btran_etas = btran_etas
        self.numba = numba
