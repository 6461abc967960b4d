"""Singular-value diagnostics for rank-growth analysis."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .matrix import as_matrix, require_finite


def singular_values(m) -> np.ndarray:
    """Descending singular values of m, one per min(rows, cols).

    Computed in float64 whatever the carrier dtype, so the relative-accuracy
    contract (1e-8 on well-conditioned inputs) holds for 32-bit runs too.
    """
    m = as_matrix(m)
    require_finite(m, "singular_values input")
    try:
        sv = np.linalg.svd(np.asarray(m, dtype=np.float64), compute_uv=False)
    except np.linalg.LinAlgError as exc:
        # LAPACK's iterative kernel gave up within its internal sweep cap.
        raise NumericError(f"SVD did not converge within the LAPACK iteration cap: {exc}") from exc
    return sv
