"""RBF-kernel SVM on sparse-code features, cross-validation, maps and P_CC.

Multiclass problems are split one-vs-rest; each binary soft-margin problem
is solved by SMO with second-order working-set selection. Features are
scaled per dimension to [-1, 1] with the training extremes, which the model
keeps so that prediction applies the identical mapping.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DataError, InputError, TrainingError
from .gpr_data import (CLASS_NAMES, CLUTTER, MINE_CLASSES, BScan, SceneTruth, WindowConfig,
                       normalize_columns, window_profiles)
from .sparse_coding import CodingParams, Dictionary, batch_encode, codes_to_matrix

log = logging.getLogger(__name__)

DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_GRID = tuple(2.0 ** k for k in range(-7, 4))
TAU = 1e-12


def rbf_kernel(a, b, gamma):
    """``exp(-gamma * ||a_i - b_j||^2)`` for rows of ``a`` and ``b``."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


@njit(cache=True)
def _smo(K, y, C, tol, max_iter):
    """Dual soft-margin SVM on a precomputed kernel.

    Returns ``(alpha, rho, iterations)``; the decision value is
    ``sum_t alpha_t y_t K(x_t, x) - rho``.
    """
    n = y.size
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    while it < max_iter:
        gmax = -np.inf
        gmax2 = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * G[t]
                if v > gmax:
                    gmax = v
                    i = t
        j = -1
        best = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = y[t] * G[t]
                if v > gmax2:
                    gmax2 = v
                b = gmax + v
                if i >= 0 and b > 0:
                    a = K[i, i] + K[t, t] - 2.0 * K[i, t]
                    if a <= 0:
                        a = TAU
                    obj = -(b * b) / a
                    if obj < best:
                        best = obj
                        j = t
        if i < 0 or j < 0 or gmax + gmax2 < tol:
            break
        it += 1
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - ai
        daj = alpha[j] - aj
        for t in range(n):
            G[t] += y[t] * (y[i] * K[t, i] * dai + y[j] * K[t, j] * daj)

    ub = np.inf
    lb = -np.inf
    free = 0
    total = 0.0
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            free += 1
            total += yg
    rho = total / free if free > 0 else (ub + lb) / 2.0
    return alpha, rho, it


@dataclass(frozen=True, eq=False)
class BinaryMachine:
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float

    def decision(self, feats, gamma):
        if self.dual_coef.size == 0:
            return np.full(feats.shape[0], self.bias)
        return rbf_kernel(feats, self.support_vectors, gamma) @ self.dual_coef + self.bias


@dataclass(frozen=True, eq=False)
class RbfSvmModel:
    """One-vs-rest RBF machines plus the feature scaling fitted on training data."""

    classes: np.ndarray
    machines: tuple
    gamma: float
    C: float
    scale_min: np.ndarray
    scale_max: np.ndarray
    tol: float = 1e-3

    @property
    def n_features(self):
        return self.scale_min.size

    def scale(self, feats):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats[None, :]
        if feats.shape[1] != self.n_features:
            raise InputError(f"feature length {feats.shape[1]} != model dimension {self.n_features}")
        if not np.all(np.isfinite(feats)):
            raise InputError("non-finite feature values")
        span = self.scale_max - self.scale_min
        safe = np.where(span > 0, span, 1.0)
        out = 2.0 * (feats - self.scale_min) / safe - 1.0
        out[:, span <= 0] = 0.0
        return out

    def decision_values(self, feats):
        z = self.scale(feats)
        return np.stack([m.decision(z, self.gamma) for m in self.machines], axis=1)

    def predict(self, feats):
        dv = self.decision_values(feats)
        # argmax keeps the first maximum, i.e. the lowest class id on ties
        return self.classes[np.argmax(dv, axis=1)]

    def __eq__(self, other):
        if not isinstance(other, RbfSvmModel):
            return False
        same = (np.array_equal(self.classes, other.classes) and self.gamma == other.gamma
                and self.C == other.C and self.tol == other.tol
                and np.array_equal(self.scale_min, other.scale_min)
                and np.array_equal(self.scale_max, other.scale_max)
                and len(self.machines) == len(other.machines))
        return same and all(
            np.array_equal(a.support_vectors, b.support_vectors)
            and np.array_equal(a.dual_coef, b.dual_coef) and a.bias == b.bias
            for a, b in zip(self.machines, other.machines))


def _check_features(features, labels=None):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("features must be a non-empty (samples, dims) array")
    if not np.all(np.isfinite(X)):
        raise InputError("non-finite feature values")
    if labels is None:
        return X
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.size != X.shape[0]:
        raise InputError(f"{y.size} labels for {X.shape[0]} samples")
    return X, y


def _scaling(X):
    return X.min(axis=0), X.max(axis=0)


def _fit_scaled(Z, y, K, classes, C, gamma, tol, smin, smax):
    machines = []
    max_iter = max(10_000_000, 100 * y.size)
    for c in classes:
        yy = np.where(y == c, 1.0, -1.0)
        alpha, rho, iters = _smo(K, yy, float(C), float(tol), max_iter)
        if iters >= max_iter:
            log.warning("SMO hit the iteration limit for class %s", c)
        sv = np.flatnonzero(alpha > 0)
        machines.append(BinaryMachine(Z[sv].copy(), (alpha[sv] * yy[sv]).copy(), float(-rho)))
    return RbfSvmModel(np.asarray(classes), tuple(machines), float(gamma), float(C),
                       smin, smax, float(tol))


def svm_train(features, labels, C=1.0, gamma=1.0, tol=1e-3) -> RbfSvmModel:
    """Fit one-vs-rest RBF machines; samples are visited in the given order."""
    X, y = _check_features(features, labels)
    if not (C > 0 and gamma > 0):
        raise InputError("C and gamma must be positive")
    classes = np.unique(y)
    if classes.size < 2:
        raise TrainingError("SVM training needs at least two classes")
    smin, smax = _scaling(X)
    model0 = RbfSvmModel(classes, (), gamma, C, smin, smax, tol)
    Z = model0.scale(X)
    K = rbf_kernel(Z, Z, gamma)
    return _fit_scaled(Z, y, K, classes, C, gamma, tol, smin, smax)


def svm_predict(model: RbfSvmModel, feature):
    """Class of one feature vector (or an array of classes for a 2-D input)."""
    f = np.asarray(feature, dtype=np.float64)
    out = model.predict(f)
    return int(out[0]) if f.ndim == 1 else out


# ---------------------------------------------------------------------------
# cross-validation


def stratified_folds(labels, nu, seed=0):
    """Fold index per sample: each class is shuffled and dealt round-robin."""
    y = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    folds = np.empty(y.size, dtype=np.int64)
    offset = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (offset + np.arange(idx.size)) % nu
        offset += idx.size
    return folds


@dataclass
class CrossValidationResult:
    best: tuple
    best_accuracy: float
    grid: list
    mean_accuracy: list
    fold_accuracy: np.ndarray
    folds: np.ndarray = field(repr=False)


def cross_validate(features, labels, param_grid=None, nu=10, seed=0, tol=1e-3):
    """Mean validation accuracy of every ``(C, gamma)`` over ``nu`` stratified folds.

    The best point maximizes accuracy; ties go to the smaller C, then the
    smaller gamma.
    """
    X, y = _check_features(features, labels)
    if nu < 2:
        raise InputError("nu must be at least 2")
    if param_grid is None:
        param_grid = list(itertools.product(DEFAULT_C_GRID, DEFAULT_GAMMA_GRID))
    grid = [(float(c), float(g)) for c, g in param_grid]
    if not grid:
        raise InputError("empty parameter grid")
    folds = stratified_folds(y, nu, seed)
    splits = []
    for f in range(nu):
        train = folds != f
        test = ~train
        if not test.any():
            raise DataError(f"fold {f} receives no samples; use fewer folds")
        if np.unique(y[train]).size < 2:
            raise DataError(f"training split of fold {f} holds fewer than two classes")
        splits.append((train, test))

    gammas = sorted({g for _, g in grid})
    acc = np.zeros((len(grid), nu))
    for f, (train, test) in enumerate(splits):
        Xtr, ytr = X[train], y[train]
        smin, smax = _scaling(Xtr)
        scaler = RbfSvmModel(np.unique(ytr), (), 1.0, 1.0, smin, smax)
        Ztr, Zte = scaler.scale(Xtr), scaler.scale(X[test])
        d2 = np.maximum((Ztr * Ztr).sum(1)[:, None] + (Ztr * Ztr).sum(1)[None, :]
                        - 2.0 * Ztr @ Ztr.T, 0.0)
        for g in gammas:
            K = np.exp(-g * d2)
            for p, (C, gg) in enumerate(grid):
                if gg != g:
                    continue
                model = _fit_scaled(Ztr, ytr, K, np.unique(ytr), C, g, tol, smin, smax)
                pred = model.classes[np.argmax(np.stack(
                    [m.decision(Zte, g) for m in model.machines], axis=1), axis=1)]
                acc[p, f] = np.mean(pred == y[test])
    mean = acc.mean(axis=1)
    order = sorted(range(len(grid)), key=lambda p: (-mean[p], grid[p][0], grid[p][1]))
    b = order[0]
    return CrossValidationResult(grid[b], float(mean[b]), grid, mean.tolist(), acc, folds)


# ---------------------------------------------------------------------------
# classification maps and scoring


@dataclass(frozen=True, eq=False)
class ClassMap:
    """Class id per pixel; rows are depth windows, columns scan positions."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.int64, copy=True)
        if lab.ndim != 2:
            raise InputError("class map must be 2-D")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def shape(self):
        return self.labels.shape

    def __eq__(self, other):
        return isinstance(other, ClassMap) and np.array_equal(self.labels, other.labels)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in self.labels:
            w.writerow(row.tolist())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = [list(map(int, r)) for r in csv.reader(io.StringIO(text)) if r]
        return cls(np.asarray(rows, dtype=np.int64))

    @staticmethod
    def sidecar():
        return json.dumps({str(k): v for k, v in CLASS_NAMES.items()}, indent=2)


def encode_features(profiles, D: Dictionary, params: CodingParams, n_jobs=1):
    """Dense ``(samples, n_atoms)`` feature rows from profile columns."""
    codes = batch_encode(D, profiles, params, n_jobs)
    return codes_to_matrix(codes, D.n).T, codes


def classify_bscan(bscan: BScan, D: Dictionary, params: CodingParams, model: RbfSvmModel,
                   window: WindowConfig = WindowConfig(), normalize: str = "none", n_jobs=1):
    """Sparse-code every (window, position) pixel over ``D`` and classify it."""
    if model.n_features != D.n:
        raise InputError(f"model expects {model.n_features} features, dictionary has {D.n} atoms")
    starts, length = window.starts(bscan.n_samples)
    if length != D.m:
        raise InputError(f"window length {length} does not match atom length {D.m}")
    profiles = normalize_columns(window_profiles(bscan, window), normalize)
    feats, _ = encode_features(profiles, D, params, n_jobs)
    pred = model.predict(feats)
    return ClassMap(pred.reshape(len(starts), bscan.n_positions))


@dataclass
class ClassScore:
    class_id: int
    name: str
    n_total: int
    n_correct: int
    pcc: float | None
    skipped: bool = False


@dataclass
class PccReport:
    scores: list

    def by_class(self):
        return {s.class_id: s for s in self.scores}

    def pcc(self, class_id):
        return self.by_class()[class_id].pcc

    def to_dict(self):
        return {CLASS_NAMES[s.class_id]: {"n_total": s.n_total, "n_correct": s.n_correct,
                                          "pcc": s.pcc, "skipped": s.skipped}
                for s in self.scores}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class_id", "class", "n_total", "n_correct", "pcc", "skipped"])
        for s in self.scores:
            w.writerow([s.class_id, s.name, s.n_total, s.n_correct,
                        "" if s.pcc is None else repr(float(s.pcc)), int(s.skipped)])
        return buf.getvalue()


def pcc(class_map: ClassMap, truth: SceneTruth) -> PccReport:
    """Probability of correct classification per class.

    A mine class scores the fraction of its halo pixels labelled with that
    class; clutter scores the fraction of pixels outside every halo
    labelled clutter. A class without pixels is reported as skipped.
    """
    if class_map.shape != truth.shape:
        raise InputError(f"map grid {class_map.shape} differs from truth grid {truth.shape}")
    got, want = class_map.labels, truth.labels
    scores = []
    for cid in (CLUTTER, *MINE_CLASSES):
        region = want == cid
        total = int(region.sum())
        if total == 0:
            scores.append(ClassScore(cid, CLASS_NAMES[cid], 0, 0, None, True))
            continue
        correct = int((got[region] == cid).sum())
        scores.append(ClassScore(cid, CLASS_NAMES[cid], total, correct, correct / total))
    return PccReport(scores)
