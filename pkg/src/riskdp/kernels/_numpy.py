"""Pure-numpy kernels.

Every function here has a twin in ``_numba`` with the same signature and the
same arithmetic order, so the lattice search returns bit-identical results on
either backend.  The golden-section routine is vectorised across levels here
and looped in the numba twin; the two agree to rounding.
"""
import math

import numpy as np

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
LOG2 = math.log(2.0)
# below this beta (outcomes scaled to [0, 1]) the log-MGF goes through expm1/log1p
SMALL_BETA = 1.0

# compositions beyond this count are refused instead of exhausting memory
MAX_LATTICE_POINTS = 20_000_000


def tail_integral(x, q, levels):
    """Integral of the quantile function of (x, q) from 0 to each level.

    ``x`` must be strictly increasing with ``q > 0``.  The result at level
    ``b`` equals ``b * CVaR_b`` and is well defined at ``b = 0``.
    """
    cum = np.empty(x.shape[0] + 1)
    cum[0] = 0.0
    cum[1:] = np.cumsum(q)
    part = np.empty(x.shape[0] + 1)
    part[0] = 0.0
    part[1:] = np.cumsum(x * q)
    k = np.searchsorted(cum[1:], levels, side="left")
    k = np.minimum(k, x.shape[0] - 1)
    return part[k] + x[k] * (levels - cum[k])


def compositions(n, parts):
    """All ways to write ``n`` as an ordered sum of ``parts`` naturals, lexicographic."""
    rows = np.zeros((1, 0), dtype=np.int64)
    for _ in range(parts - 1):
        rem = n - rows.sum(axis=1)
        counts = rem + 1
        total = int(counts.sum())
        if total > MAX_LATTICE_POINTS:
            raise ValueError(f"lattice with >{MAX_LATTICE_POINTS} points; use a coarser step")
        rows = np.repeat(rows, counts, axis=0)
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        col = np.arange(total, dtype=np.int64) - starts
        rows = np.hstack([rows, col[:, None]])
    last = n - rows.sum(axis=1)
    return np.hstack([rows, last[:, None]])


def lattice_min(tables, cons, budget, strict, tol):
    """Minimise a separable sum over the simplex lattice.

    ``tables[s, i]`` is the objective contribution of coordinate ``s`` at
    ``i / n`` (``inf`` marks an infeasible coordinate value), ``cons`` the
    matching contribution to a single separable constraint ``<= budget``
    (``< budget`` when ``strict``).  Returns ``(value, index_vector, found)``;
    ties keep the lexicographically smallest index vector.
    """
    parts, width = tables.shape
    comp = compositions(width - 1, parts)
    val = tables[0, comp[:, 0]].copy()
    con = cons[0, comp[:, 0]].copy()
    for s in range(1, parts):
        val = val + tables[s, comp[:, s]]
        con = con + cons[s, comp[:, s]]
    if strict:
        ok = con < budget - tol
    else:
        ok = con <= budget + tol
    ok &= np.isfinite(val)
    if not ok.any():
        return np.inf, np.zeros(parts, dtype=np.int64), False
    masked = np.where(ok, val, np.inf)
    j = int(np.argmin(masked))
    return float(masked[j]), comp[j].copy(), True


def _logmeanexp(a, logq):
    # rows: levels, cols: atoms
    z = a + logq
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def _phi(u, xn, logq, loglev):
    beta = np.exp(u)
    lme = _logmeanexp(-beta[:, None] * xn[None, :], logq[None, :])
    small = beta <= SMALL_BETA
    if small.any():
        # log E[exp(-beta x)] via expm1/log1p; the plain form cancels to eps/beta here
        t = (np.exp(logq)[None, :] * np.expm1(-beta[small, None] * xn[None, :])).sum(axis=1)
        lme[small] = np.log1p(t)
    return -(lme - loglev) / beta


def evar_golden(xn, logq, levels, lo, hi, hi_cap, tol):
    """Maximise the EVaR primal over log(beta) for several levels at once.

    ``xn`` is the outcome vector rescaled to [0, 1].  Returns
    ``(values, betas, hit_cap)``; ``hit_cap`` flags levels whose objective was
    still increasing at ``hi_cap``.
    """
    loglev = np.log(levels)
    n = levels.shape[0]
    a = np.full(n, math.log(lo))
    b = np.full(n, math.log(hi))
    cap = math.log(hi_cap)
    # push the upper end out while the objective still rises there
    active = _phi(b, xn, logq, loglev) > _phi(b - LOG2, xn, logq, loglev)
    hit_cap = np.zeros(n, dtype=np.bool_)
    while active.any():
        idx = np.nonzero(active)[0]
        over = b[idx] + LOG2 > cap
        hit_cap[idx[over]] = True
        idx = idx[~over]
        if idx.size == 0:
            break
        b[idx] = b[idx] + LOG2
        a[idx] = np.maximum(a[idx], b[idx] - 4.0 * LOG2)
        still = _phi(b[idx], xn, logq, loglev[idx]) > _phi(b[idx] - LOG2, xn, logq, loglev[idx])
        active[:] = False
        active[idx[still]] = True

    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc = _phi(c, xn, logq, loglev)
    fd = _phi(d, xn, logq, loglev)
    live = (b - a) > tol
    while live.any():
        i = np.nonzero(live)[0]
        left = fc[i] > fd[i]
        # maximum lies in [a, d]
        il = i[left]
        b[il] = d[il]
        d[il] = c[il]
        fd[il] = fc[il]
        c[il] = b[il] - INV_PHI * (b[il] - a[il])
        if il.size:
            fc[il] = _phi(c[il], xn, logq, loglev[il])
        ir = i[~left]
        a[ir] = c[ir]
        c[ir] = d[ir]
        fc[ir] = fd[ir]
        d[ir] = a[ir] + INV_PHI * (b[ir] - a[ir])
        if ir.size:
            fd[ir] = _phi(d[ir], xn, logq, loglev[ir])
        live = (b - a) > tol
    pick_c = fc >= fd
    values = np.where(pick_c, fc, fd)
    betas = np.exp(np.where(pick_c, c, d))
    return values, betas, hit_cap
