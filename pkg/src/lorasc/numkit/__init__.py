"""Numeric substrate: matrix kernels, seeded sampling, autodiff, SVD."""

from .linalg import singular_values
from .matrix import as_matrix, frobenius, matmul, require_finite, sample_uniform, std_all
from .precision import DTYPES, default_dtype, precision, set_default_dtype
from .rng import STREAMS, RngState
from .tape import Node, Tape, finite_diff_grad

__all__ = [
    "DTYPES",
    "Node",
    "RngState",
    "STREAMS",
    "Tape",
    "as_matrix",
    "default_dtype",
    "finite_diff_grad",
    "frobenius",
    "matmul",
    "precision",
    "require_finite",
    "sample_uniform",
    "set_default_dtype",
    "singular_values",
    "std_all",
]
