"""Sparse coding over a fixed dictionary: error-constrained OMP and LARS-LASSO.

Both solvers keep a Cholesky factor of the Gram matrix of the active atoms
and grow (or shrink) it by one row per step instead of refactorizing.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigurationError, ConvergenceError, InputError

ATOM_NORM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Dictionary:
    """``m x n`` matrix whose unit-norm columns are the atoms."""

    atoms: np.ndarray
    provenance: dict = field(default_factory=dict)
    rows: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.array(self.atoms, dtype=np.float64, copy=True)
        if a.ndim != 2 or a.shape[1] < 1:
            raise InputError(f"dictionary must be a 2-D array with n >= 1, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InputError("dictionary contains non-finite entries")
        norms = np.linalg.norm(a, axis=0)
        bad = np.flatnonzero(np.abs(norms - 1.0) > ATOM_NORM_TOL)
        if bad.size:
            raise InputError(f"atom {bad[0]} has norm {norms[bad[0]]!r}, expected 1")
        a.setflags(write=False)
        rows = np.ascontiguousarray(a.T)
        rows.setflags(write=False)
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @classmethod
    def from_matrix(cls, matrix, provenance=None):
        """Normalize the columns of ``matrix`` and wrap them."""
        m = np.asarray(matrix, dtype=np.float64)
        norms = np.linalg.norm(m, axis=0)
        if np.any(norms == 0):
            raise InputError("cannot normalize an all-zero atom")
        return cls(m / norms, provenance or {})

    @property
    def m(self):
        return self.atoms.shape[0]

    @property
    def n(self):
        return self.atoms.shape[1]

    def __eq__(self, other):
        return (isinstance(other, Dictionary) and self.atoms.shape == other.atoms.shape
                and np.array_equal(self.atoms, other.atoms))


@dataclass(frozen=True, eq=False)
class SparseCode:
    """Nonzero coefficients of a length-``n`` vector, indices strictly increasing.

    ``degenerate`` is set when the solver stopped early because the active
    Gram matrix became numerically singular.
    """

    indices: np.ndarray
    values: np.ndarray
    n: int
    degenerate: bool = False

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64, copy=True).reshape(-1)
        val = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if idx.shape != val.shape:
            raise InputError("indices and values differ in length")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise InputError("sparse code indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= self.n:
                raise InputError(f"sparse code index out of range [0, {self.n})")
            if np.any(val == 0) or not np.all(np.isfinite(val)):
                raise InputError("sparse code coefficients must be nonzero and finite")
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def empty(cls, n):
        return cls(np.zeros(0, np.int64), np.zeros(0), n)

    @classmethod
    def from_support(cls, support, coefs, n, degenerate=False):
        support = np.asarray(support, dtype=np.int64)
        coefs = np.asarray(coefs, dtype=np.float64)
        order = np.argsort(support, kind="stable")
        support, coefs = support[order], coefs[order]
        keep = coefs != 0
        return cls(support[keep], coefs[keep], n, degenerate)

    @classmethod
    def from_dense(cls, x):
        x = np.asarray(x, dtype=np.float64)
        idx = np.flatnonzero(x)
        return cls(idx, x[idx], x.size)

    @property
    def nnz(self):
        return int(self.indices.size)

    @property
    def entries(self):
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def to_dense(self):
        x = np.zeros(self.n)
        x[self.indices] = self.values
        return x

    def __eq__(self, other):
        return (isinstance(other, SparseCode) and self.n == other.n
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"SparseCode(n={self.n}, entries={self.entries})"


@dataclass(frozen=True)
class CodingParams:
    """Solver choice and its parameter.

    ``alpha`` bounds the squared residual norm for OMP. ``lam`` is the
    absolute l1 weight of the LASSO objective ``0.5*||y - Dx||^2 + lam*||x||_1``
    (no scaling by the signal length). ``max_nonzeros`` caps the support;
    ``None`` means the profile length.
    """

    method: str = "omp"
    alpha: float = 0.1
    lam: float = 0.1
    max_nonzeros: int | None = None

    def __post_init__(self):
        if self.method not in ("omp", "lars_lasso"):
            raise ConfigurationError(f"unknown coding method {self.method!r}")
        if self.method == "omp" and not self.alpha > 0:
            raise ConfigurationError("OMP needs alpha > 0")
        if self.method == "lars_lasso" and not self.lam >= 0:
            raise ConfigurationError("LARS-LASSO needs lam >= 0")
        if self.max_nonzeros is not None and self.max_nonzeros < 1:
            raise ConfigurationError("max_nonzeros must be at least 1")

    def cap(self, m):
        k = m if self.max_nonzeros is None else self.max_nonzeros
        if k > m:
            raise ConfigurationError(f"max_nonzeros={k} exceeds the profile length {m}")
        return k

    def to_dict(self):
        return {"method": self.method, "alpha": self.alpha, "lam": self.lam,
                "max_nonzeros": self.max_nonzeros}


def _check_signal(D: Dictionary, y):
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape != (D.m,):
        raise InputError(f"signal of shape {y.shape} does not match dictionary rows {D.m}")
    if not np.all(np.isfinite(y)):
        raise InputError("signal contains non-finite values")
    return y


def _code(D, sup, x, status):
    if status == _kernels.TOO_MANY_STEPS:
        raise ConvergenceError(f"LARS-LASSO path exceeded {10 * D.m} breakpoints")
    return SparseCode.from_support(sup, x, D.n, status == _kernels.DEGENERATE)


def omp_encode(D: Dictionary, y, params: CodingParams) -> SparseCode:
    """Greedy error-constrained pursuit.

    Stops once ``||y - Dx||^2 <= alpha``, at ``max_nonzeros`` atoms, or when
    no atom correlates with the residual above 1e-12. Coefficients are the
    least-squares fit on the final support. Ties pick the lowest index.
    An active Gram matrix with condition estimate above 1e12 ends the
    pursuit early and marks the code ``degenerate``.
    """
    if params.method != "omp":
        raise ConfigurationError("omp_encode called with non-OMP parameters")
    y = _check_signal(D, y)
    sup, x, status = _kernels.omp_core(D.rows, y, float(params.alpha), params.cap(D.m))
    return _code(D, sup, x, status)


def lars_lasso_encode(D: Dictionary, y, params: CodingParams) -> SparseCode:
    """Homotopy (LARS) solution of ``min 0.5*||y - Dx||^2 + lam*||x||_1``.

    The path starts at ``x = 0`` with ``lam_max = ||D^T y||_inf`` and follows
    the piecewise-linear solution down to ``lam``, adding atoms when their
    correlation reaches the active level and removing them when their
    coefficient crosses zero. More than ``10 m`` breakpoints raise
    :class:`ConvergenceError`.
    """
    if params.method != "lars_lasso":
        raise ConfigurationError("lars_lasso_encode called with non-LASSO parameters")
    y = _check_signal(D, y)
    sup, x, status = _kernels.lars_core(D.rows, y, float(params.lam), params.cap(D.m), 10 * D.m)
    return _code(D, sup, x, status)


def encode(D: Dictionary, y, params: CodingParams) -> SparseCode:
    if params.method == "omp":
        return omp_encode(D, y, params)
    return lars_lasso_encode(D, y, params)


def batch_encode(D: Dictionary, Y, params: CodingParams, n_jobs: int = 1):
    """Encode every column of ``Y`` (a ProfileMatrix or 2-D array).

    Columns are independent, so ``n_jobs > 1`` spreads them over a thread
    pool; the result equals the sequential one element by element.
    """
    data = getattr(Y, "data", Y)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] != D.m:
        raise InputError(f"profiles of shape {data.shape} do not match dictionary rows {D.m}")
    cols = [np.ascontiguousarray(data[:, i]) for i in range(data.shape[1])]
    if n_jobs <= 1 or len(cols) < 2:
        return [encode(D, y, params) for y in cols]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(lambda y: encode(D, y, params), cols))


def reconstruct(D: Dictionary, x: SparseCode):
    if x.n != D.n:
        raise InputError(f"code dimension {x.n} does not match dictionary size {D.n}")
    if x.nnz and (x.indices[0] < 0 or x.indices[-1] >= D.n):
        raise InputError("code index out of range")
    return D.atoms[:, x.indices] @ x.values


def codes_to_matrix(codes, n=None):
    """Stack codes as columns of a dense ``n x L`` coefficient matrix."""
    if n is None:
        n = codes[0].n
    X = np.zeros((n, len(codes)))
    for i, code in enumerate(codes):
        X[code.indices, i] = code.values
    return X


def mean_sparsity(codes) -> float:
    codes = list(codes)
    if not codes:
        raise InputError("mean sparsity of an empty code list")
    return sum(c.nnz for c in codes) / len(codes)
