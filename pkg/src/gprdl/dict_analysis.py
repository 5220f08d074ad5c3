"""Dictionary quality statistics built on the reconstruction similarity.

For a profile ``y`` and its sparse reconstruction ``yhat`` the similarity is
the peak of the absolute normalized cross-correlation over all lags. The
distribution of similarities over a profile set is summarized by its
histogram, coefficient of variation and its Kolmogorov-Smirnov distance to
a reference distribution.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import AnalysisError, InputError, SimilarityUndefinedError, SweepError
from .sparse_coding import CodingParams, Dictionary, batch_encode, reconstruct

log = logging.getLogger(__name__)


def cross_correlation(y, yhat):
    """``r(k) = sum_n y(n) * yhat(n + k)`` for ``k = -(m-1) .. m-1``."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.ndim != 1 or y.shape != yhat.shape or y.size < 1:
        raise InputError(f"cross-correlation needs equal-length vectors, got {y.shape} and {yhat.shape}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yhat))):
        raise InputError("cross-correlation of non-finite data")
    return np.correlate(yhat, y, mode="full")


def similarity(y, yhat) -> float:
    r = cross_correlation(y, yhat)
    e1 = float(np.dot(y, y))
    e2 = float(np.dot(yhat, yhat))
    if e1 == 0.0 or e2 == 0.0:
        raise SimilarityUndefinedError("similarity is undefined for an all-zero vector")
    return float(np.max(np.abs(r)) / np.sqrt(e1 * e2))


@dataclass(frozen=True)
class SimilaritySamples:
    values: np.ndarray
    n_excluded: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise AnalysisError("similarity sample set is empty")
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise AnalysisError("similarity values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @property
    def mean(self):
        return float(self.values.mean())


def similarity_distribution(Y, D: Dictionary, params: CodingParams, n_jobs: int = 1):
    """Similarity of every profile to its reconstruction over ``D``.

    Profiles whose code comes out empty have no defined similarity; they
    are left out and counted in ``n_excluded``.
    """
    data = np.asarray(getattr(Y, "data", Y), dtype=np.float64)
    if data.ndim != 2 or data.shape[0] != D.m:
        raise InputError("profiles do not match the dictionary rows")
    codes = batch_encode(D, data, params, n_jobs)
    values, excluded = [], 0
    for i, code in enumerate(codes):
        y = data[:, i]
        if code.nnz == 0 or not np.any(y):
            excluded += 1
            continue
        values.append(similarity(y, reconstruct(D, code)))
    if not values:
        raise AnalysisError(f"all {len(codes)} profiles produced empty codes")
    prov = {"dictionary": D.provenance.get("method", "unknown"), "coding": params.to_dict()}
    return SimilaritySamples(np.asarray(values), excluded, prov)


class Ecdf:
    """Right-continuous empirical CDF, ``P(x) = #{samples <= x} / N``."""

    def __init__(self, samples):
        s = np.sort(np.asarray(getattr(samples, "values", samples), dtype=np.float64).ravel())
        if s.size == 0:
            raise InputError("empirical CDF of an empty sample")
        if not np.all(np.isfinite(s)):
            raise InputError("empirical CDF of non-finite samples")
        s.setflags(write=False)
        self.sorted_samples = s

    def __len__(self):
        return self.sorted_samples.size

    def __call__(self, x):
        return np.searchsorted(self.sorted_samples, x, side="right") / self.sorted_samples.size


def ks_distance(P1: Ecdf, P2: Ecdf) -> float:
    """Exact two-sample statistic: largest gap between the ECDFs at pooled points."""
    if not isinstance(P1, Ecdf):
        P1 = Ecdf(P1)
    if not isinstance(P2, Ecdf):
        P2 = Ecdf(P2)
    pooled = np.concatenate([P1.sorted_samples, P2.sorted_samples])
    return float(np.max(np.abs(P1(pooled) - P2(pooled))))


def histogram(samples, n_bins: int = 50, range=(0.0, 1.0)):
    """Bin masses of ``n_bins`` equal bins; the last bin is closed on the right.

    Samples outside ``range`` are clamped into the edge bins so the masses
    always sum to one.
    """
    s = np.asarray(getattr(samples, "values", samples), dtype=np.float64).ravel()
    if s.size == 0:
        raise InputError("histogram of an empty sample")
    if n_bins < 1:
        raise InputError("n_bins must be at least 1")
    lo, hi = map(float, range)
    if not hi > lo:
        raise InputError("histogram range must be increasing")
    idx = np.floor((s - lo) * (n_bins / (hi - lo))).astype(np.int64)
    idx = np.clip(idx, 0, n_bins - 1)
    return np.bincount(idx, minlength=n_bins) / s.size


def coefficient_of_variation(samples) -> float:
    """Sample standard deviation (N-1 denominator) over the mean."""
    s = np.asarray(getattr(samples, "values", samples), dtype=np.float64).ravel()
    if s.size < 2:
        raise InputError("coefficient of variation needs at least two samples")
    mu = s.mean()
    if mu == 0:
        raise AnalysisError("coefficient of variation is undefined for zero mean")
    return float(s.std(ddof=1) / mu)


# ---------------------------------------------------------------------------
# parameter sweep


@dataclass
class SweepRow:
    iterations: int
    n_atoms: int
    lam: float
    alpha: float
    mean: float
    std: float
    cv: float
    ks_vs_reference: float
    learn_seconds: float
    is_reference: bool = False
    n_excluded: int = 0
    samples: SimilaritySamples | None = field(default=None, repr=False)


@dataclass
class SweepResult:
    method: str
    rows: list

    @property
    def reference(self):
        return next(r for r in self.rows if r.is_reference)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "iterations", "n_atoms", "lambda", "alpha", "mean", "std",
                    "cv", "ks_vs_reference", "learn_seconds", "reference", "n_excluded"])
        for r in self.rows:
            w.writerow([self.method, r.iterations, r.n_atoms, repr(float(r.lam)), repr(float(r.alpha)),
                        repr(float(r.mean)), repr(float(r.std)), repr(float(r.cv)), repr(float(r.ks_vs_reference)),
                        repr(float(r.learn_seconds)), int(r.is_reference), r.n_excluded])
        return buf.getvalue()


def parameter_sweep(Y, grid, lam: float = 0.1, alpha: float = 0.1, method: str = "odl",
                    seed: int = 0, reference=None, base_config=None):
    """Train one dictionary per ``(iterations, n_atoms)`` point and compare
    each point's similarity distribution with the reference point's.

    ``reference`` defaults to the first grid point. Rows come back in grid
    order; every point uses the same seed so identical points give
    identical rows.
    """
    from .dict_learning import DictLearnConfig, train

    grid = [(int(t), int(k)) for t, k in grid]
    if not grid:
        raise InputError("empty sweep grid")
    reference = tuple(reference) if reference is not None else grid[0]
    if reference not in grid:
        raise InputError(f"reference point {reference} is not in the grid")
    if method == "ksvd":
        coding = CodingParams("omp", alpha=alpha,
                              max_nonzeros=getattr(base_config, "coding", CodingParams()).max_nonzeros)
    else:
        coding = CodingParams("lars_lasso", lam=lam)
    extra = {}
    if base_config is not None:
        extra = {"init": base_config.init, "batch_size": base_config.batch_size,
                 "forget": base_config.forget}

    stats = []
    for t, k in grid:
        cfg = DictLearnConfig(n_atoms=k, iterations=t, coding=coding, seed=seed, **extra)
        try:
            t0 = time.perf_counter()
            D, report = train(Y, cfg, method, **({"trace": False} if method == "odl" else {}))
            samples = similarity_distribution(Y, D, coding)
        except Exception as exc:
            raise SweepError(f"sweep point (T={t}, n_atoms={k}) failed: {exc}", (t, k)) from exc
        stats.append((samples, report.wall_time_update, time.perf_counter() - t0))
        log.info("sweep %s T=%d n=%d mean=%.4f", method, t, k, samples.mean)

    ref = Ecdf(stats[grid.index(reference)][0])
    rows = []
    for (t, k), (samples, upd, _) in zip(grid, stats):
        v = samples.values
        rows.append(SweepRow(
            iterations=t, n_atoms=k, lam=lam, alpha=alpha, mean=float(v.mean()),
            std=float(v.std(ddof=1)) if v.size > 1 else 0.0,
            cv=coefficient_of_variation(v) if v.size > 1 else 0.0,
            ks_vs_reference=ks_distance(Ecdf(v), ref), learn_seconds=upd,
            is_reference=(t, k) == reference, n_excluded=samples.n_excluded, samples=samples))
    return SweepResult(method, rows)


def histogram_csv(bins_by_label: dict, range=(0.0, 1.0)):
    """CSV of one or more histograms sharing the same bins."""
    labels = list(bins_by_label)
    n_bins = len(bins_by_label[labels[0]])
    lo, hi = range
    width = (hi - lo) / n_bins
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", *labels])
    for b in np.arange(n_bins):
        w.writerow([repr(float(lo + b * width)), repr(float(lo + (b + 1) * width)),
                    *(repr(float(bins_by_label[k][b])) for k in labels)])
    return buf.getvalue()
