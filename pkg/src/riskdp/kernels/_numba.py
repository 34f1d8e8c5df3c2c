"""numba twins of the kernels in ``_numpy``."""
import math

import numpy as np
from numba import njit

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
LOG2 = math.log(2.0)
SMALL_BETA = 1.0


@njit(cache=True)
def tail_integral(x, q, levels):
    m = x.shape[0]
    cum = np.empty(m + 1)
    part = np.empty(m + 1)
    cum[0] = 0.0
    part[0] = 0.0
    cum[1:] = np.cumsum(q)
    part[1:] = np.cumsum(x * q)
    out = np.empty(levels.shape[0])
    for j in range(levels.shape[0]):
        lev = levels[j]
        k = np.searchsorted(cum[1:], lev)
        if k > m - 1:
            k = m - 1
        out[j] = part[k] + x[k] * (lev - cum[k])
    return out


@njit(cache=True)
def lattice_min(tables, cons, budget, strict, tol):
    parts, width = tables.shape
    n = width - 1
    idx = np.zeros(parts, dtype=np.int64)
    idx[parts - 1] = n
    best = np.inf
    best_idx = idx.copy()
    found = False
    while True:
        val = tables[0, idx[0]]
        con = cons[0, idx[0]]
        for s in range(1, parts):
            val = val + tables[s, idx[s]]
            con = con + cons[s, idx[s]]
        if strict:
            ok = con < budget - tol
        else:
            ok = con <= budget + tol
        if ok and np.isfinite(val) and val < best:
            best = val
            best_idx[:] = idx
            found = True
        # odometer over the free coordinates, last one absorbs the remainder
        j = parts - 2
        while j >= 0:
            idx[j] += 1
            used = 0
            for k in range(parts - 1):
                used += idx[k]
            if used <= n:
                break
            idx[j] = 0
            j -= 1
        if j < 0:
            break
        used = 0
        for k in range(parts - 1):
            used += idx[k]
        idx[parts - 1] = n - used
    return best, best_idx, found


@njit(cache=True)
def _phi(u, xn, logq, loglev):
    beta = math.exp(u)
    if beta <= SMALL_BETA:
        # log E[exp(-beta x)] via expm1/log1p; the plain form cancels to eps/beta here
        t = 0.0
        for i in range(xn.shape[0]):
            t += math.exp(logq[i]) * math.expm1(-beta * xn[i])
        return -(math.log1p(t) - loglev) / beta
    m = -np.inf
    for i in range(xn.shape[0]):
        z = -beta * xn[i] + logq[i]
        if z > m:
            m = z
    s = 0.0
    for i in range(xn.shape[0]):
        s += math.exp(-beta * xn[i] + logq[i] - m)
    return -((m + math.log(s)) - loglev) / beta


@njit(cache=True)
def evar_golden(xn, logq, levels, lo, hi, hi_cap, tol):
    n = levels.shape[0]
    values = np.empty(n)
    betas = np.empty(n)
    hit_cap = np.zeros(n, dtype=np.bool_)
    cap = math.log(hi_cap)
    for j in range(n):
        loglev = math.log(levels[j])
        a = math.log(lo)
        b = math.log(hi)
        while _phi(b, xn, logq, loglev) > _phi(b - LOG2, xn, logq, loglev):
            if b + LOG2 > cap:
                hit_cap[j] = True
                break
            b += LOG2
            a = max(a, b - 4.0 * LOG2)
        c = b - INV_PHI * (b - a)
        d = a + INV_PHI * (b - a)
        fc = _phi(c, xn, logq, loglev)
        fd = _phi(d, xn, logq, loglev)
        while (b - a) > tol:
            if fc > fd:
                b = d
                d = c
                fd = fc
                c = b - INV_PHI * (b - a)
                fc = _phi(c, xn, logq, loglev)
            else:
                a = c
                c = d
                fc = fd
                d = a + INV_PHI * (b - a)
                fd = _phi(d, xn, logq, loglev)
        if fc >= fd:
            values[j] = fc
            betas[j] = math.exp(c)
        else:
            values[j] = fd
            betas[j] = math.exp(d)
    return values, betas, hit_cap
