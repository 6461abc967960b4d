"""AdamW, learning-rate schedules, and per-expert reinitialization.

Each cascade expert trains under a fresh optimizer and a compressed copy of
the base schedule: same shape, same endpoints, squeezed into the expert's
step budget. A one-step budget cannot interpolate anything, so it degrades
to a constant at the starting rate.

Factor-specific learning rates (the 16x B-matrix ratio) ride on parameter
names: anything ending in ".b" takes the multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ArgumentError, NumericError
from .numkit import require_finite

SCHEDULE_KINDS = ("linear", "cosine", "constant")


@dataclass(frozen=True)
class Schedule:
    kind: str
    lr_start: float
    lr_end: float
    total_steps: int

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ArgumentError(f"unknown schedule kind {self.kind!r}; expected {SCHEDULE_KINDS}")
        if self.total_steps < 1:
            raise ArgumentError(f"schedule needs at least 1 step, got {self.total_steps}")


def lr_at(schedule: Schedule, step: int) -> float:
    """Learning rate at a 0-based step inside the schedule."""
    if not 0 <= step < schedule.total_steps:
        raise ArgumentError(
            f"step {step} outside schedule range [0, {schedule.total_steps})")
    if schedule.kind == "constant" or schedule.total_steps == 1:
        return schedule.lr_start
    frac = step / (schedule.total_steps - 1)
    if schedule.kind == "linear":
        return schedule.lr_start + (schedule.lr_end - schedule.lr_start) * frac
    # cosine: endpoints equal lr_start and lr_end exactly
    return schedule.lr_end + 0.5 * (schedule.lr_start - schedule.lr_end) * (1.0 + math.cos(math.pi * frac))


def compressed_schedule(base: Schedule, steps_per_expert: int) -> Schedule:
    """Same shape and endpoints, replayed within one expert's step budget."""
    if steps_per_expert < 1:
        raise ArgumentError(f"steps_per_expert must be >= 1, got {steps_per_expert}")
    if steps_per_expert == 1:
        # A single step cannot iterate the schedule; hold the starting rate.
        return replace(base, kind="constant", total_steps=1)
    return replace(base, total_steps=steps_per_expert)


@dataclass(frozen=True)
class LrPolicy:
    """Base rate plus the factor-B multiplier (1 = plain, 16 = LoRA+ style)."""

    base_lr: float
    b_ratio: float = 1.0

    def __post_init__(self):
        if self.b_ratio < 1.0:
            raise ArgumentError(f"B-matrix lr ratio must be >= 1, got {self.b_ratio}")


class AdamWState:
    """Moments and step counter for one set of named parameters."""

    def __init__(self, params: dict[str, np.ndarray], policy: LrPolicy,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if not params:
            raise ArgumentError("optimizer needs a non-empty parameter set")
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}
        self.step_count = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.policy = policy
        self.lr_mult = {name: (policy.b_ratio if name.endswith(".b") else 1.0)
                        for name in params}


def reinit_optimizer(params: dict[str, np.ndarray], policy: LrPolicy,
                     beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                     weight_decay: float = 0.0) -> AdamWState:
    """Zeroed moments, step 0; no statistic survives from the previous expert."""
    return AdamWState(params, policy, beta1, beta2, eps, weight_decay)


def effective_lr(state: AdamWState, name: str, lr: float) -> float:
    return lr * state.lr_mult[name]


def adamw_step(state: AdamWState, params: dict[str, np.ndarray],
               grads: dict[str, np.ndarray], lr: float) -> None:
    """Bias-corrected Adam update with decoupled weight decay, in place."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step_lr = effective_lr(state, name, lr)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay != 0.0:
            update = update + state.weight_decay * p
        p -= step_lr * update
        require_finite(p, f"parameter {name!r} after AdamW step {t}")
