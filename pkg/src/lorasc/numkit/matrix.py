"""Dense 2-D kernels with validated shapes and mandatory-finite results.

Matrices are plain 2-D numpy arrays throughout the package; these helpers
enforce the carrier contract (two dimensions, no NaN/Inf escaping a public
operation) at the API boundary.
"""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError, NumericError, ShapeError
from .precision import default_dtype
from .rng import RngState


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def require_finite(m: np.ndarray, context: str) -> np.ndarray:
    if not np.isfinite(m).all():
        raise NumericError(f"non-finite values in {context}")
    return m


def matmul(a, b) -> np.ndarray:
    """Standard product; raises ShapeError naming both shapes on mismatch."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul mismatch: {a.shape} x {b.shape}")
    return require_finite(a @ b, "matmul result")


def std_all(m) -> float:
    """Population standard deviation (divide by n) over all elements.

    Accumulates in float64 regardless of the carrier dtype so the scale used
    for noise injection is reduction-order stable.
    """
    m = as_matrix(m)
    if m.size == 0:
        raise ShapeError("std_all of an empty matrix")
    require_finite(m, "std_all input")
    if m.min() == m.max():
        return 0.0  # constant matrix, exactly; float mean rounding must not leak in
    return float(np.std(m, dtype=np.float64))


def frobenius(m) -> float:
    m = as_matrix(m)
    return float(np.sqrt(np.sum(np.asarray(m, dtype=np.float64) ** 2)))


def sample_uniform(rows: int, cols: int, lo: float, hi: float, rng: RngState,
                   dtype=None) -> np.ndarray:
    """I.i.d. samples in [lo, hi); advances rng deterministically.

    Draws happen at float64 granularity and are clipped after the cast so the
    half-open bound survives rounding into a narrower carrier dtype.
    """
    if rows < 1 or cols < 1:
        raise ShapeError(f"sample_uniform needs positive dims, got {rows}x{cols}")
    if lo > hi:
        raise ArgumentError(f"sample_uniform bounds reversed: lo={lo} > hi={hi}")
    scalar = np.dtype(dtype or default_dtype()).type
    raw = rng.uniform((rows, cols), lo, hi)
    out = raw.astype(scalar, copy=False)
    if hi > lo:
        top = np.nextafter(scalar(hi), scalar(lo))
        out = np.clip(out, scalar(lo), top)
    return require_finite(out, "sample_uniform result")
