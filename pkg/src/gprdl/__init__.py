"""Sparse dictionary learning and classification for GPR range profiles."""

from .errors import (AnalysisError, ConfigurationError, ConvergenceError, DataError, FormatError,
                     GprdlError, InputError, NormalizationError, SimilarityUndefinedError,
                     SweepError, TrainingError)
from .sparse_coding import (CodingParams, Dictionary, SparseCode, batch_encode, encode,
                            lars_lasso_encode, mean_sparsity, omp_encode, reconstruct)

__version__ = "0.1.0"
