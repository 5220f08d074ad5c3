"""Compiled inner loops for the sparse solvers.

All routines take the dictionary transposed (``Dt``, atoms as C-contiguous
rows) and keep a lower Cholesky factor ``L`` of the active Gram matrix in
a preallocated square buffer whose leading ``k x k`` block is live.
"""

import numpy as np
from numba import njit

PIVOT_TOL = 1e-12
MAX_CONDITION = 1e12

OK = 0
DEGENERATE = 1
TOO_MANY_STEPS = 2


@njit(cache=True, nogil=True)
def _forward(L, k, b, out):
    for i in range(k):
        s = b[i]
        for j in range(i):
            s -= L[i, j] * out[j]
        out[i] = s / L[i, i]


@njit(cache=True, nogil=True)
def _backward(L, k, b, out):
    for i in range(k - 1, -1, -1):
        s = b[i]
        for j in range(i + 1, k):
            s -= L[j, i] * out[j]
        out[i] = s / L[i, i]


@njit(cache=True, nogil=True)
def chol_solve(L, k, b):
    z = np.empty(k)
    out = np.empty(k)
    _forward(L, k, b, z)
    _backward(L, k, z, out)
    return out


@njit(cache=True, nogil=True)
def _full_cholesky(Dt, sup, k, L):
    """Refactorize from scratch; False if the Gram matrix is not positive definite."""
    for i in range(k):
        for j in range(i + 1):
            s = np.dot(Dt[sup[i]], Dt[sup[j]])
            for t in range(j):
                s -= L[i, t] * L[j, t]
            if i == j:
                if s <= PIVOT_TOL:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return True


@njit(cache=True, nogil=True)
def chol_append(Dt, sup, k, j, L):
    """Grow the factor by atom j placed at position k. Returns success."""
    djj = np.dot(Dt[j], Dt[j])
    if k == 0:
        L[0, 0] = np.sqrt(djj)
        return True
    g = np.empty(k)
    for t in range(k):
        g[t] = np.dot(Dt[sup[t]], Dt[j])
    w = np.empty(k)
    _forward(L, k, g, w)
    p2 = djj - np.dot(w, w)
    if p2 >= PIVOT_TOL:
        for t in range(k):
            L[k, t] = w[t]
        L[k, k] = np.sqrt(p2)
        return True
    sup[k] = j
    return _full_cholesky(Dt, sup, k + 1, L)


@njit(cache=True, nogil=True)
def chol_remove(L, k, pos):
    """Delete row/column ``pos`` of the k x k factor (rank-one update of the tail)."""
    tail = L[pos + 1:k, pos].copy()
    for i in range(pos, k - 1):
        for t in range(pos):
            L[i, t] = L[i + 1, t]
    for i in range(pos, k - 1):
        for t in range(pos, i + 1):
            L[i, t] = L[i + 1, t + 1]
    nt = k - 1 - pos
    for i in range(nt):
        d = L[pos + i, pos + i]
        r = np.sqrt(d * d + tail[i] * tail[i])
        c = r / d
        s = tail[i] / d
        L[pos + i, pos + i] = r
        for t in range(i + 1, nt):
            L[pos + t, pos + i] = (L[pos + t, pos + i] + s * tail[t]) / c
            tail[t] = c * tail[t] - s * L[pos + t, pos + i]
    for t in range(k):
        L[k - 1, t] = 0.0
        L[t, k - 1] = 0.0


@njit(cache=True, nogil=True)
def condition_estimate(L, k):
    lo = np.inf
    hi = 0.0
    for i in range(k):
        d = L[i, i]
        lo = min(lo, d)
        hi = max(hi, d)
    return (hi / lo) ** 2


@njit(cache=True, nogil=True)
def _residual(Dt, y, sup, x, k):
    r = y.copy()
    for t in range(k):
        r -= x[t] * Dt[sup[t]]
    return r


@njit(cache=True, nogil=True)
def omp_core(Dt, y, alpha, kmax):
    n, m = Dt.shape
    cap = min(kmax, n, m)
    L = np.zeros((cap, cap))
    sup = np.zeros(cap, dtype=np.int64)
    x = np.zeros(0)
    used = np.zeros(n, dtype=np.bool_)
    rhs = Dt @ y
    r = y.copy()
    k = 0
    status = OK
    while np.dot(r, r) > alpha and k < cap:
        corr = Dt @ r
        j = -1
        best = -1.0
        for i in range(n):
            if not used[i]:
                v = abs(corr[i])
                if v > best:
                    best = v
                    j = i
        if j < 0 or best < 1e-12:
            break
        if not chol_append(Dt, sup, k, j, L) or condition_estimate(L, k + 1) > MAX_CONDITION:
            status = DEGENERATE
            if k > 0:
                _full_cholesky(Dt, sup, k, L)
            break
        sup[k] = j
        used[j] = True
        k += 1
        b = np.empty(k)
        for t in range(k):
            b[t] = rhs[sup[t]]
        x = chol_solve(L, k, b)
        r = _residual(Dt, y, sup, x, k)
    return sup[:k].copy(), x[:k].copy(), status


@njit(cache=True, nogil=True)
def lars_core(Dt, y, lam, kmax, max_steps):
    """LASSO homotopy from lam_max down to lam.

    Returns (support, coefficients, status). The active correlation level
    ``level`` decreases by ``gamma`` each step; the active coefficients move
    along ``w = G_AA^{-1} s``.
    """
    n, m = Dt.shape
    cap = min(kmax, n, m)
    L = np.zeros((cap, cap))
    sup = np.zeros(cap, dtype=np.int64)
    sgn = np.zeros(cap)
    x = np.zeros(cap)
    active = np.zeros(n, dtype=np.bool_)
    c = Dt @ y
    j = np.argmax(np.abs(c))
    level = abs(c[j])
    if level <= lam:
        return sup[:0].copy(), x[:0].copy(), OK
    chol_append(Dt, sup, 0, j, L)
    sup[0] = j
    sgn[0] = np.sign(c[j])
    active[j] = True
    k = 1
    skip = -1
    status = OK
    steps = 0
    eps = 1e-12
    u = np.empty(m)
    while True:
        steps += 1
        if steps > max_steps:
            status = TOO_MANY_STEPS
            break
        w = chol_solve(L, k, sgn[:k].copy())
        u[:] = 0.0
        for t in range(k):
            u += w[t] * Dt[sup[t]]
        a = Dt @ u
        gamma = level - lam
        event = 0
        who = -1
        for i in range(n):
            if active[i] or i == skip:
                continue
            den = 1.0 - a[i]
            if den > eps:
                g = max(level - c[i], 0.0) / den
                if g < gamma:
                    gamma = g
                    event = 1
                    who = i
            den = 1.0 + a[i]
            if den > eps:
                g = max(level + c[i], 0.0) / den
                if g < gamma:
                    gamma = g
                    event = 1
                    who = i
        for t in range(k):
            if x[t] * w[t] < 0.0:
                g = -x[t] / w[t]
                if g > 0.0 and g < gamma:
                    gamma = g
                    event = 2
                    who = t
        for t in range(k):
            x[t] += gamma * w[t]
        level -= gamma
        skip = -1
        if event == 0:
            break
        if event == 2:
            atom = sup[who]
            chol_remove(L, k, who)
            for t in range(who, k - 1):
                sup[t] = sup[t + 1]
                sgn[t] = sgn[t + 1]
                x[t] = x[t + 1]
            k -= 1
            x[k] = 0.0
            active[atom] = False
            skip = atom
            if k == 0:
                c = Dt @ y
                jj = np.argmax(np.abs(c))
                level = abs(c[jj])
                if level <= lam:
                    break
                chol_append(Dt, sup, 0, jj, L)
                sup[0] = jj
                sgn[0] = np.sign(c[jj])
                active[jj] = True
                k = 1
                continue
        else:
            if k >= cap:
                status = DEGENERATE
                break
            r = _residual(Dt, y, sup, x, k)
            if not chol_append(Dt, sup, k, who, L) or condition_estimate(L, k + 1) > MAX_CONDITION:
                status = DEGENERATE
                _full_cholesky(Dt, sup, k, L)
                break
            sup[k] = who
            sgn[k] = np.sign(np.dot(Dt[who], r))
            x[k] = 0.0
            active[who] = True
            k += 1
        r = _residual(Dt, y, sup, x, k)
        c = Dt @ r

    if k == 0:
        return sup[:0].copy(), x[:0].copy(), status
    # exact solve on the final support and signs removes drift from the path updates
    b = np.empty(k)
    for t in range(k):
        b[t] = np.dot(Dt[sup[t]], y) - lam * sgn[t]
    pol = chol_solve(L, k, b)
    same = True
    for t in range(k):
        if np.sign(pol[t]) != sgn[t]:
            same = False
    if same:
        for t in range(k):
            x[t] = pol[t]
    return sup[:k].copy(), x[:k].copy(), status
