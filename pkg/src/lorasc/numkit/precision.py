"""Default float width for freshly created matrices.

Runs default to 32-bit, matching fine-tuning practice. Tests that check
gradients or decompositions against tight analytic tolerances switch to
64-bit via the ``precision`` context manager.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ArgumentError

DTYPES = {"f32": np.float32, "f64": np.float64}

_default = np.float32


def default_dtype() -> type:
    return _default


def set_default_dtype(name) -> None:
    global _default
    if isinstance(name, str):
        if name not in DTYPES:
            raise ArgumentError(f"unknown precision {name!r}; expected one of {sorted(DTYPES)}")
        _default = DTYPES[name]
    elif name in (np.float32, np.float64):
        _default = name
    else:
        raise ArgumentError(f"unknown precision {name!r}")


@contextlib.contextmanager
def precision(name):
    """Temporarily switch the default dtype ("f32" or "f64")."""
    previous = _default
    set_default_dtype(name)
    try:
        yield
    finally:
        set_default_dtype(previous)
