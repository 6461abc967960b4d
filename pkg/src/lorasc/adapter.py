"""Low-rank adapter algebra.

A pair (A, B) attached to a d x k target contributes the update
``scaling * B @ A`` with B of shape (d, r) and A of shape (r, k). B starts at
zero so a fresh pair is an exact no-op, which also forces the first round of
scale-matched noise to be exactly zero.

The slow-fast moving average runs on A and B separately, never on the
product; averaging the factors is not the same thing as averaging the
deltas, and a regression test pins that distinction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ShapeError
from .numkit import RngState, matmul, sample_uniform


@dataclass
class LoraPair:
    """One adapter: target name, factors, rank, and merge scaling."""

    target: str
    a: np.ndarray  # (rank, k)
    b: np.ndarray  # (d, rank)
    rank: int
    scaling: float = 1.0

    def __post_init__(self):
        if self.a.ndim != 2 or self.b.ndim != 2:
            raise ShapeError(f"adapter factors for {self.target!r} must be 2-D")
        d, k = self.b.shape[0], self.a.shape[1]
        if self.rank < 1 or self.rank > min(d, k):
            raise ArgumentError(
                f"rank {self.rank} out of range [1, {min(d, k)}] for {d}x{k} target {self.target!r}")
        if self.a.shape[0] != self.rank or self.b.shape[1] != self.rank:
            raise ShapeError(
                f"factor shapes {self.b.shape} x {self.a.shape} disagree with rank {self.rank}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.b.shape[0], self.a.shape[1])

    @property
    def trainable_count(self) -> int:
        d, k = self.shape
        return self.rank * (d + k)

    def clone(self) -> "LoraPair":
        return LoraPair(self.target, self.a.copy(), self.b.copy(), self.rank, self.scaling)


def init_pair(target: str, d: int, k: int, rank: int, scaling: float,
              rng: RngState) -> LoraPair:
    """Fresh pair: A uniform in +-1/sqrt(k), B zero, so the delta is zero."""
    if rank < 1 or rank > min(d, k):
        raise ArgumentError(f"rank {rank} out of range [1, {min(d, k)}] for {d}x{k} target")
    bound = 1.0 / np.sqrt(k)
    a = sample_uniform(rank, k, -bound, bound, rng)
    b = np.zeros((d, rank), dtype=a.dtype)
    return LoraPair(target, a, b, rank, scaling)


def delta(pair: LoraPair) -> np.ndarray:
    """The dense update this pair contributes: scaling * B @ A."""
    out = matmul(pair.b, pair.a)
    if pair.scaling != 1.0:
        out = out * pair.scaling
    return out


def merge_into(backbone, pair: LoraPair) -> None:
    """Add the pair's delta to its target matrix in place; pair unchanged."""
    if pair.target not in backbone.params:
        raise ShapeError(f"merge target {pair.target!r} not found in backbone")
    w = backbone.params[pair.target]
    if w.shape != pair.shape:
        raise ShapeError(f"merge shape mismatch on {pair.target!r}: {w.shape} vs {pair.shape}")
    w += delta(pair).astype(w.dtype, copy=False)


def ema_update(slow: LoraPair, fast: LoraPair, alpha: float) -> LoraPair:
    """New slow pair alpha*slow + (1-alpha)*fast, factor-wise.

    The endpoints are exact copies, not arithmetic: retention 1 must freeze
    the slow pair bit-for-bit and retention 0 must hand over the fast pair
    bit-for-bit.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError(f"retention alpha must lie in [0, 1], got {alpha}")
    if slow.a.shape != fast.a.shape or slow.b.shape != fast.b.shape:
        raise ShapeError(
            f"slow/fast shape mismatch on {slow.target!r}: "
            f"{slow.b.shape}x{slow.a.shape} vs {fast.b.shape}x{fast.a.shape}")
    if alpha == 1.0:
        return slow.clone()
    if alpha == 0.0:
        return fast.clone()
    alpha = float(alpha)
    a = alpha * slow.a + (1.0 - alpha) * fast.a
    b = alpha * slow.b + (1.0 - alpha) * fast.b
    return LoraPair(slow.target, a, b, slow.rank, slow.scaling)


@dataclass
class ExpertState:
    """Per-target slow and fast pairs plus the cascade period index."""

    slow: dict[str, LoraPair]
    fast: dict[str, LoraPair]
    epoch: int = 0

    def __post_init__(self):
        if set(self.slow) != set(self.fast):
            raise ShapeError("slow and fast adapters cover different targets")
        for name, s in self.slow.items():
            f = self.fast[name]
            if s.a.shape != f.a.shape or s.b.shape != f.b.shape or s.scaling != f.scaling:
                raise ShapeError(f"slow/fast pair mismatch on {name!r}")

    @classmethod
    def fresh(cls, targets: dict[str, tuple[int, int]], rank: int, scaling: float,
              rng: RngState) -> "ExpertState":
        """Slow pairs drawn per target; fast pairs start as clones of slow."""
        slow = {name: init_pair(name, d, k, rank, scaling, rng)
                for name, (d, k) in targets.items()}
        fast = {name: pair.clone() for name, pair in slow.items()}
        return cls(slow=slow, fast=fast, epoch=0)


def reinit_fast(expert: ExpertState, rng: RngState) -> None:
    """Draw fresh fast pairs; slow pairs are untouched."""
    for name, old in expert.fast.items():
        d, k = old.shape
        expert.fast[name] = init_pair(name, d, k, old.rank, old.scaling, rng)
