"""Dictionary training: batch K-SVD and online dictionary learning (ODL).

Both trainers minimise ``||Y - DX||_F`` over unit-norm atoms by alternating
a sparse-coding step with a dictionary-update step. K-SVD codes the whole
training set with OMP and then refits every atom by a rank-one
approximation of its restricted residual. ODL draws one profile at a time,
codes it with LARS-LASSO and refreshes all atoms by one sweep of block
coordinate descent on the accumulated statistics ``A = sum x x^T`` and
``B = sum y x^T``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .errors import ConfigurationError, DataError, InputError
from .gpr_data import ProfileMatrix
from .sparse_coding import (CodingParams, Dictionary, SparseCode, batch_encode,
                            codes_to_matrix, lars_lasso_encode)

log = logging.getLogger(__name__)

INIT_STRATEGIES = ("random_columns", "random_gaussian")


@dataclass(frozen=True)
class DictLearnConfig:
    """Training parameters.

    ``iterations`` is the number of K-SVD alternations, or for ODL the
    number of passes' worth of draws (``iterations * L`` profiles).
    ``batch_size`` > 1 lets ODL accumulate several coded draws before each
    atom sweep; ``forget`` < 1 down-weights old statistics.
    """

    n_atoms: int = 512
    iterations: int = 40
    coding: CodingParams = field(default_factory=CodingParams)
    init: str = "random_columns"
    seed: int = 0
    batch_size: int = 1
    forget: float = 1.0

    def __post_init__(self):
        if isinstance(self.coding, dict):
            object.__setattr__(self, "coding", CodingParams(**self.coding))
        if self.n_atoms < 1 or self.iterations < 1:
            raise ConfigurationError("n_atoms and iterations must be at least 1")
        if self.init not in INIT_STRATEGIES:
            raise ConfigurationError(f"unknown init strategy {self.init!r}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if not 0 < self.forget <= 1:
            raise ConfigurationError("forget must lie in (0, 1]")

    def to_dict(self):
        return {"n_atoms": self.n_atoms, "iterations": self.iterations,
                "coding": self.coding.to_dict(), "init": self.init, "seed": self.seed,
                "batch_size": self.batch_size, "forget": self.forget}


@dataclass
class LearnReport:
    objective_trace: list = field(default_factory=list)
    wall_time_coding: float = 0.0
    wall_time_update: float = 0.0
    replaced_atoms: int = 0
    dictionary_updates: int = 0
    safeguarded_iterations: int = 0

    def to_dict(self):
        return {"objective_trace": list(map(float, self.objective_trace)),
                "wall_time_coding": self.wall_time_coding,
                "wall_time_update": self.wall_time_update,
                "replaced_atoms": self.replaced_atoms,
                "dictionary_updates": self.dictionary_updates,
                "safeguarded_iterations": self.safeguarded_iterations}


def _trusted(atoms, provenance=None):
    # skips validation inside training loops; atoms are unit norm by construction
    d = object.__new__(Dictionary)
    object.__setattr__(d, "atoms", atoms)
    object.__setattr__(d, "rows", np.ascontiguousarray(atoms.T))
    object.__setattr__(d, "provenance", provenance or {})
    return d


def _streams(seed):
    init_ss, draw_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(draw_ss)


def _profiles(Y):
    if isinstance(Y, ProfileMatrix):
        return Y
    return ProfileMatrix(np.asarray(Y, dtype=np.float64))


def init_dictionary(Y, n_atoms: int, strategy: str = "random_columns", seed=0,
                    rng=None) -> Dictionary:
    """Starting dictionary: distinct random training columns or Gaussian atoms."""
    Y = _profiles(Y)
    if rng is None:
        rng = _streams(seed)[0]
    if strategy == "random_columns":
        if Y.n_profiles < n_atoms:
            raise DataError(f"{n_atoms} atoms requested from only {Y.n_profiles} profiles")
        pick = rng.choice(Y.n_profiles, size=n_atoms, replace=False)
        cols = Y.data[:, pick]
        zero = np.flatnonzero(np.linalg.norm(cols, axis=0) == 0)
        if zero.size:
            raise DataError(f"training column {pick[zero[0]]} is all zeros")
        mat = cols
    elif strategy == "random_gaussian":
        mat = rng.standard_normal((Y.m, n_atoms))
    else:
        raise ConfigurationError(f"unknown init strategy {strategy!r}")
    return Dictionary.from_matrix(mat, {"init": strategy, "seed": seed})


def objective(D: Dictionary, Y, codes) -> float:
    """Frobenius norm of ``Y - DX``."""
    data = getattr(Y, "data", Y)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] != D.m or len(codes) != data.shape[1]:
        raise InputError("dictionary, profiles and codes have inconsistent sizes")
    if any(c.n != D.n for c in codes):
        raise InputError("code dimension does not match the dictionary")
    return float(np.linalg.norm(data - D.atoms @ codes_to_matrix(codes, D.n)))


# ---------------------------------------------------------------------------
# K-SVD


def _leading_pair(E, v0, tol=1e-10, max_iter=1000):
    """Leading left singular vector of E by power iteration on E E^T.

    Returns ``(u, E^T u)``; the second term is sigma_1 times the leading
    right singular vector. Warm-started at ``v0``.
    """
    v = v0 / np.linalg.norm(v0)
    for _ in range(max_iter):
        w = E @ (E.T @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        w /= nw
        done = np.linalg.norm(w - v) <= tol
        v = w
        if done:
            break
    return v, E.T @ v


def _ksvd_sweep(D, X, data):
    """Sequential rank-one updates of every atom; modifies ``D`` and ``X`` in place.

    Returns the residual ``data - D X`` and the number of replaced atoms.
    """
    L = data.shape[1]
    R = data - D @ X
    claimed = np.zeros(L, dtype=bool)
    replaced = 0
    for j in range(D.shape[1]):
        omega = np.flatnonzero(X[j])
        if omega.size == 0:
            col = _worst_column(R, data, claimed)
            if col is None:
                continue
            y = data[:, col]
            scale = np.linalg.norm(y)
            D[:, j] = y / scale
            X[:, col] = 0.0
            X[j, col] = scale
            R[:, col] = y - D[:, j] * scale
            claimed[col] = True
            replaced += 1
            continue
        E = R[:, omega] + np.outer(D[:, j], X[j, omega])
        d, coef = _leading_pair(E, D[:, j])
        D[:, j] = d
        X[j, omega] = coef
        R[:, omega] = E - np.outer(d, coef)
    return R, replaced


def ksvd_train(Y, config: DictLearnConfig, n_jobs: int = 1, callback=None):
    """Batch K-SVD.

    Each iteration codes every profile by OMP, then visits the atoms in
    order and replaces atom j and its coefficients by the best rank-one
    approximation of the residual restricted to the profiles that use j.
    An atom no profile uses is reset to the worst-represented profile,
    which it then codes exactly.

    Greedy coding can occasionally return a worse code than the one a
    profile already had. If the iteration built on the fresh codes ends
    above the previous objective, it is redone with every profile keeping
    the better of its fresh and previous code; that variant cannot
    increase the objective, so the trace is non-increasing.
    """
    if config.coding.method != "omp":
        raise ConfigurationError("K-SVD requires OMP coding parameters")
    Y = _profiles(Y)
    data = Y.data
    if data.shape[1] == 0 or not np.any(data):
        raise DataError("K-SVD needs a non-empty, non-zero training set")
    init_rng, _ = _streams(config.seed)
    D = np.array(init_dictionary(Y, config.n_atoms, config.init, config.seed, init_rng).atoms)
    n = D.shape[1]
    report = LearnReport()
    X = None
    prev = np.inf
    for it in range(config.iterations):
        t0 = time.perf_counter()
        fresh = codes_to_matrix(batch_encode(_trusted(D), data, config.coding, n_jobs), n)
        report.wall_time_coding += time.perf_counter() - t0

        t1 = time.perf_counter()
        D_new, X_new = D.copy(), fresh.copy()
        R, replaced = _ksvd_sweep(D_new, X_new, data)
        obj = float(np.linalg.norm(R))
        if obj > prev:
            old_err = np.sum((data - D @ X) ** 2, axis=0)
            new_err = np.sum((data - D @ fresh) ** 2, axis=0)
            keep = old_err < new_err
            fresh[:, keep] = X[:, keep]
            D_new, X_new = D.copy(), fresh
            R, replaced = _ksvd_sweep(D_new, X_new, data)
            obj = float(np.linalg.norm(R))
            report.safeguarded_iterations += 1
            log.debug("ksvd iteration %d fell back to safeguarded codes", it)
        D, X, prev = D_new, X_new, obj
        report.replaced_atoms += replaced
        report.wall_time_update += time.perf_counter() - t1
        report.dictionary_updates += 1
        report.objective_trace.append(obj)
        log.debug("ksvd iteration %d objective %.6g", it, obj)
        if callback is not None:
            callback(it, D, X)
    prov = {"method": "ksvd", "config": config.to_dict()}
    return Dictionary(D, prov), report


def _worst_column(R, data, claimed):
    err = np.sum(R ** 2, axis=0)
    err[claimed] = -1.0
    err[np.linalg.norm(data, axis=0) == 0] = -1.0
    col = int(np.argmax(err))
    return None if err[col] <= 0 else col


# ---------------------------------------------------------------------------
# ODL


@njit(cache=True)
def _bcd_sweep(Dt, A, Bt):
    """One block-coordinate pass over the atoms (rows of ``Dt``).

    u_j = d_j + (b_j - D a_j) / A_jj, then d_j = u_j / ||u_j||.
    Atoms with A_jj <= 1e-10 are left alone.
    """
    n = Dt.shape[0]
    for j in range(n):
        ajj = A[j, j]
        if ajj <= 1e-10:
            continue
        u = Dt[j] + (Bt[j] - np.dot(A[j], Dt)) / ajj
        nrm = np.sqrt(np.dot(u, u))
        if nrm > 0.0:
            Dt[j] = u / nrm


def _accumulate(A, Bt, pending, n, forget):
    """Add a batch of (code, profile) pairs to the statistics in draw order.

    With ``forget < 1`` the statistics decay by ``forget`` before each draw,
    so draw ``i`` of ``b`` enters with weight ``forget ** (b - 1 - i)``.
    """
    b = len(pending)
    X = np.zeros((n, b))
    Yb = np.empty((b, Bt.shape[1]))
    for i, (code, y) in enumerate(pending):
        X[code.indices, i] = code.values
        Yb[i] = y
    if forget < 1.0:
        A *= forget ** b
        Bt *= forget ** b
        X_w = X * forget ** np.arange(b - 1, -1, -1.0)
    else:
        X_w = X
    A += X_w @ X.T
    Bt += X_w @ Yb


def odl_train(Y, config: DictLearnConfig, trace: bool = True, callback=None):
    """Online dictionary learning with per-draw LARS-LASSO coding.

    Draws ``iterations * L`` profiles uniformly with replacement. Every
    ``batch_size`` draws the statistics are accumulated and all atoms are
    refreshed by one coordinate-descent sweep. With ``trace`` the
    objective on the full training set is recorded after every ``L``
    draws (coded with the same LASSO parameters).
    """
    if config.coding.method != "lars_lasso":
        raise ConfigurationError("ODL requires LARS-LASSO coding parameters")
    Y = _profiles(Y)
    L, m = Y.n_profiles, Y.m
    if L == 0:
        raise DataError("ODL needs at least one training profile")
    init_rng, draw_rng = _streams(config.seed)
    D0 = init_dictionary(Y, config.n_atoms, config.init, config.seed, init_rng)
    Dt = np.array(D0.atoms.T, order="C")
    n = Dt.shape[0]
    A = np.zeros((n, n))
    Bt = np.zeros((n, m))
    report = LearnReport()
    params = config.coding
    pending = []
    for p in range(config.iterations):
        draws = draw_rng.integers(0, L, size=L)
        for k, i in enumerate(draws):
            t0 = time.perf_counter()
            y = np.asarray(Y.column(int(i)), dtype=np.float64)
            pending.append((lars_lasso_encode(_trusted(Dt.T), y, params), y))
            report.wall_time_coding += time.perf_counter() - t0
            if len(pending) < config.batch_size and k < L - 1:
                continue
            t1 = time.perf_counter()
            _accumulate(A, Bt, pending, n, config.forget)
            _bcd_sweep(Dt, A, Bt)
            report.wall_time_update += time.perf_counter() - t1
            report.dictionary_updates += 1
            pending = []
        if trace:
            D = _trusted(Dt.T)
            codes = batch_encode(D, Y.data, params)
            report.objective_trace.append(objective(D, Y.data, codes))
        if callback is not None:
            callback(p, Dt.T)
    prov = {"method": "odl", "config": config.to_dict()}
    return Dictionary(Dt.T, prov), report


def train(Y, config: DictLearnConfig, method: str, **kw):
    if method == "ksvd":
        return ksvd_train(Y, config, **kw)
    if method == "odl":
        return odl_train(Y, config, **kw)
    raise ConfigurationError(f"unknown training method {method!r}")


def default_config(method: str, **overrides) -> DictLearnConfig:
    """Defaults of the reference experiment: T=40, 512 atoms, lam=0.1, alpha=0.1."""
    coding = CodingParams("omp", alpha=0.1) if method == "ksvd" else CodingParams("lars_lasso", lam=0.1)
    cfg = DictLearnConfig(coding=coding)
    return replace(cfg, **overrides) if overrides else cfg
