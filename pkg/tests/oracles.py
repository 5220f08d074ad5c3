"""Slow, independent reference implementations used as test oracles.

Nothing here imports the package's numerical code; each routine follows
the textbook definition as directly as possible.
"""

import itertools
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


# ---------------------------------------------------------------------------
# scene generation


def reference_scene(cfg):
    """Per-pixel re-implementation of the synthetic B-scan formulas."""
    ns, npos = cfg.n_samples, cfg.n_positions
    f, v = cfg.wavelet_center_freq, cfg.wave_velocity
    out = np.zeros((ns, npos))
    for tg in cfg.targets:
        t0 = 2.0 * tg.depth / v
        for p in range(npos):
            x = p * cfg.dx
            tx = 2.0 / v * math.sqrt(tg.depth ** 2 + (x - tg.x0) ** 2)
            amp = tg.reflectivity * t0 / max(tx, t0)
            for i in range(ns):
                a = (math.pi * f * (i * cfg.dt - tx)) ** 2
                out[i, p] += amp * (1.0 - 2.0 * a) * math.exp(-a)

    if cfg.clutter_std > 0:
        h = math.ceil(math.sqrt(6.0) / (math.pi * f) / cfg.dt)
        kt = np.array([(1 - 2 * (math.pi * f * k * cfg.dt) ** 2)
                       * math.exp(-(math.pi * f * k * cfg.dt) ** 2) for k in range(-h, h + 1)])
        kt /= math.sqrt(np.sum(kt ** 2))
        fwhm = cfg.clutter_corr_length / cfg.dx
        sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        r = math.ceil(3.0 * sigma)
        kx = np.array([math.exp(-k * k / (2 * sigma ** 2)) for k in range(-r, r + 1)])
        kx /= math.sqrt(np.sum(kx ** 2))
        rng = np.random.default_rng(cfg.seed)
        white = rng.standard_normal((ns + 2 * h, npos + 2 * r))
        # symmetric kernels: convolution equals correlation with the 2-D outer kernel
        patches = sliding_window_view(white, (kt.size, kx.size))
        out += cfg.clutter_std * np.einsum("ijab,ab->ij", patches, np.outer(kt, kx))

    if cfg.surface_ringing_amp != 0:
        for i in range(ns):
            t = i * cfg.dt
            out[i, :] += (cfg.surface_ringing_amp * math.exp(-t / cfg.ringing_decay)
                          * math.cos(2 * math.pi * f * t))
    return out


# ---------------------------------------------------------------------------
# sparse coding


def dense_omp(D, y, alpha, kmax):
    """Greedy OMP with explicit normal-equation solves; returns (support, coefs)."""
    support, coef = [], np.zeros(0)
    r = y.copy()
    while r @ r > alpha and len(support) < kmax:
        corr = np.abs(D.T @ r)
        corr[support] = -1.0
        j = int(np.argmax(corr))
        if corr[j] < 1e-12:
            break
        support.append(j)
        A = D[:, support]
        coef = np.linalg.solve(A.T @ A, A.T @ y)
        r = y - A @ coef
    return support, coef


def best_subset_residual(D, y, k):
    """Smallest squared residual over all supports of size <= k."""
    best = float(y @ y)
    for size in range(1, k + 1):
        for s in itertools.combinations(range(D.shape[1]), size):
            A = D[:, s]
            c = np.linalg.lstsq(A, y, rcond=None)[0]
            res = y - A @ c
            best = min(best, float(res @ res))
    return best


def cd_lasso(D, y, lam, gap_tol=1e-12, max_sweeps=200000):
    """Cyclic coordinate descent on 0.5||y - Dx||^2 + lam ||x||_1 to a duality gap."""
    n = D.shape[1]
    x = np.zeros(n)
    r = y.copy()
    sq = np.sum(D * D, axis=0)
    for _ in range(max_sweeps):
        for j in range(n):
            rho = D[:, j] @ r + sq[j] * x[j]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / sq[j]
            if new != x[j]:
                r -= D[:, j] * (new - x[j])
                x[j] = new
        corr = np.max(np.abs(D.T @ r))
        nu = r * min(1.0, lam / corr) if corr > 0 else r
        primal = 0.5 * r @ r + lam * np.abs(x).sum()
        dual = 0.5 * y @ y - 0.5 * (y - nu) @ (y - nu)
        if primal - dual <= gap_tol:
            return x
    raise RuntimeError("coordinate descent did not reach the duality gap")


# ---------------------------------------------------------------------------
# statistics


def naive_xcorr(y, yhat):
    m = len(y)
    out = []
    for k in range(-(m - 1), m):
        s = 0.0
        for n in range(m):
            if 0 <= n + k < m:
                s += y[n] * yhat[n + k]
        out.append(s)
    return np.array(out)


def naive_similarity(y, yhat):
    r = naive_xcorr(y, yhat)
    return max(abs(v) for v in r) / math.sqrt(sum(a * a for a in y) * sum(b * b for b in yhat))


def naive_cv(samples):
    n = len(samples)
    mean = sum(samples) / n
    var = sum((s - mean) ** 2 for s in samples) / (n - 1)
    return math.sqrt(var) / mean


def naive_ks(a, b):
    pts = sorted(set(a) | set(b))
    best = 0.0
    for x in pts:
        fa = sum(1 for v in a if v <= x) / len(a)
        fb = sum(1 for v in b if v <= x) / len(b)
        best = max(best, abs(fa - fb))
    return best


def naive_histogram(samples, n_bins, lo=0.0, hi=1.0):
    counts = [0] * n_bins
    width = (hi - lo) / n_bins
    for s in samples:
        k = 0
        while k < n_bins - 1 and s >= lo + (k + 1) * width:
            k += 1
        counts[k] += 1
    return np.array(counts) / len(samples)


def naive_pcc(map_labels, truth_labels, class_id):
    total = correct = 0
    for row_m, row_t in zip(map_labels, truth_labels):
        for m, t in zip(row_m, row_t):
            if t == class_id:
                total += 1
                correct += int(m == class_id)
    return total, correct


# ---------------------------------------------------------------------------
# dictionary learning


def planted_model(seed, m=20, n=50, k=3, L=1500):
    """Random unit-norm dictionary and exactly k-sparse training signals."""
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((m, n))
    D /= np.linalg.norm(D, axis=0)
    X = np.zeros((n, L))
    for i in range(L):
        idx = rng.choice(n, k, replace=False)
        X[idx, i] = rng.standard_normal(k)
    return D, D @ X


def greedy_recovery(D_true, D_hat, threshold=0.95):
    """Fraction of true atoms matched one-to-one (largest |cosine| first) above threshold."""
    C = np.abs(D_true.T @ D_hat)
    hits = 0
    for _ in range(min(C.shape)):
        i, j = np.unravel_index(np.argmax(C), C.shape)
        if C[i, j] <= threshold:
            break
        hits += 1
        C[i, :] = -1.0
        C[:, j] = -1.0
    return hits / D_true.shape[1]
