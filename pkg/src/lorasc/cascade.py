"""The cascaded training engine.

One run walks a fixed stage list per cascade period ("epoch" in the ladder's
sense; by default one period per data epoch):

    reinit fast (periods after the first) -> inject scale-matched noise ->
    fresh optimizer + compressed schedule -> train the fast pairs ->
    fold fast into slow by retention-weighted averaging -> merge the slow
    delta into the backbone.

Ladder levels strip stages off the top: "slow" skips the noise injection,
"cascade" additionally skips the averaging and merges the fast pairs
directly, and "vanilla" is a single pair trained over the whole budget and
merged once. A separate chain-style baseline retrains a fresh pair per
period with only optimizer restarts; with retention 0 and no noise the full
engine must reproduce it bit for bit, and a test holds it to that.

Bookkeeping: every injected noise matrix and merged delta is accumulated
per target, so at any period boundary the backbone must equal

    initial + noise_sum + delta_sum        (per target, infinity norm)

within float accumulation tolerance. The run audits this after every merge.

Randomness is split into per-purpose streams (adapter init, noise, batch
order) derived from the run seed, so e.g. disabling noise cannot shift the
batch order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .adapter import ExpertState, LoraPair, delta, ema_update, init_pair, merge_into, reinit_fast
from .data import BatchStream, Dataset
from .errors import ArgumentError, ConfigError, NumericError, TrainingError
from .evaluation import MetricsRecord, evaluate
from .model import Backbone, forward, loss
from .numkit import RngState, Tape, sample_uniform, std_all
from .optim import (LrPolicy, Schedule, adamw_step, compressed_schedule, lr_at,
                    reinit_optimizer)

LADDERS = ("vanilla", "cascade", "slow", "full")
BASELINES = ("none", "cola")

TELESCOPE_TOL = 1e-4


@dataclass(frozen=True)
class CascadeConfig:
    """Everything one training run is parameterized by."""

    alpha: float = 0.5              # slow-pair retention per period
    noise_intensity: float = 0.1    # uniform half-width multiplier (lambda)
    rank: int = 8
    lora_alpha: float | None = None  # merge scaling numerator; None -> rank (scaling 1)
    epochs: int = 5                 # passes over the training split
    steps_per_expert: int | None = None  # None -> one expert per data epoch
    ladder: str = "full"
    baseline: str = "none"
    discard_noise: bool = False
    batch_size: int = 4
    lr: float = 1e-3
    lr_end: float = 0.0
    schedule: str = "linear"
    b_lr_ratio: float = 1.0         # B-matrix lr multiplier (16 for LoRA+ style)
    cascade_lr_scale: float = 1.0   # extra lr factor when cascading is on
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"cascade.alpha must lie in [0, 1], got {self.alpha}")
        if self.noise_intensity < 0.0:
            raise ConfigError(f"cascade.lambda must be >= 0, got {self.noise_intensity}")
        if self.ladder not in LADDERS:
            raise ConfigError(f"cascade.ladder must be one of {LADDERS}, got {self.ladder!r}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"cascade.baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.epochs < 1:
            raise ConfigError(f"cascade.epochs must be >= 1, got {self.epochs}")
        if self.steps_per_expert is not None and self.steps_per_expert < 1:
            raise ConfigError(f"cascade.steps_per_expert must be >= 1, got {self.steps_per_expert}")

    @property
    def scaling(self) -> float:
        numer = self.rank if self.lora_alpha is None else self.lora_alpha
        return numer / self.rank

    def effective_lr(self) -> float:
        if self.ladder == "vanilla":
            return self.lr
        return self.lr * self.cascade_lr_scale


@dataclass
class TaskBundle:
    """Splits one run trains and evaluates on."""

    train: Dataset
    val: Dataset | None = None
    test: Dataset | None = None
    pretrain: Dataset | None = None


@dataclass
class RunLedger:
    """Per-target accumulation of injected noise and merged deltas."""

    noise_sum: dict[str, np.ndarray]
    delta_sum: dict[str, np.ndarray]
    sigma_last: dict[str, float] = field(default_factory=dict)

    @classmethod
    def fresh(cls, shapes: dict[str, tuple[int, int]], dtype) -> "RunLedger":
        return cls(noise_sum={n: np.zeros(s, dtype=dtype) for n, s in shapes.items()},
                   delta_sum={n: np.zeros(s, dtype=dtype) for n, s in shapes.items()})

    def record_noise(self, target: str, noise: np.ndarray, sigma: float) -> None:
        self.noise_sum[target] += noise
        self.sigma_last[target] = sigma

    def record_merge(self, target: str, merged: np.ndarray) -> None:
        self.delta_sum[target] += merged


class RunState:
    """Mutable state of one run; everything a checkpoint must capture."""

    def __init__(self, config: CascadeConfig, backbone: Backbone):
        self.config = config
        self.backbone = backbone
        self.initial_params = {n: w.copy() for n, w in backbone.params.items()}
        shapes = backbone.target_shapes()
        self.rng_init = RngState(config.seed, "adapter-init")
        self.expert = ExpertState.fresh(shapes, config.rank, config.scaling,
                                        self.rng_init)
        self.rng_noise = RngState(config.seed, "noise")
        self.ledger = RunLedger.fresh(shapes, next(iter(backbone.params.values())).dtype)
        self.records: list[MetricsRecord] = []
        self.trace: list[str] = []
        self.epoch = 0          # completed cascade periods
        self.global_step = 0
        self.optimizer = None

    def telescope_residual(self) -> dict[str, float]:
        """Infinity-norm gap between the backbone and its ledger replay."""
        gaps = {}
        for name in self.ledger.noise_sum:
            replay = (self.initial_params[name] + self.ledger.noise_sum[name]
                      + self.ledger.delta_sum[name])
            gaps[name] = float(np.max(np.abs(self.backbone.params[name] - replay)))
        return gaps

    def check_telescope(self, tol: float = TELESCOPE_TOL) -> None:
        for name, gap in self.telescope_residual().items():
            if gap > tol:
                raise NumericError(
                    f"telescoping audit failed on {name!r} after period {self.epoch}: "
                    f"gap {gap:.3e} > {tol:.1e}")


@dataclass
class RunReport:
    config: CascadeConfig
    run_id: str
    backbone: Backbone
    expert: ExpertState | None
    records: list[MetricsRecord]
    trace: list[str]
    ledger: RunLedger
    state: RunState | None = None


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def apply_noise(state: RunState) -> None:
    """Perturb each adapted target by uniform noise scaled to its slow delta.

    The scale is the elementwise standard deviation of the slow pair's own
    dense update, never the backbone's; with a zero-initialized slow pair
    the first period's noise is therefore exactly zero. Unadapted matrices
    are never touched.
    """
    cfg = state.config
    if cfg.noise_intensity < 0:
        raise ArgumentError(f"noise intensity must be >= 0, got {cfg.noise_intensity}")
    half = cfg.noise_intensity / 2.0
    for name, slow in state.expert.slow.items():
        sigma = std_all(delta(slow))
        w = state.backbone.params[name]
        draw = sample_uniform(w.shape[0], w.shape[1], -half, half, state.rng_noise,
                              dtype=w.dtype)
        noise = draw * np.asarray(sigma, dtype=np.float64).astype(w.dtype)
        w += noise
        state.ledger.record_noise(name, noise, sigma)


def _remove_last_noise(state: RunState, noises: dict[str, np.ndarray]) -> None:
    # discard_noise escape hatch: back the period's perturbation out again
    for name, noise in noises.items():
        state.backbone.params[name] -= noise
        state.ledger.noise_sum[name] -= noise


def train_fast_expert(state: RunState, stream: BatchStream, schedule: Schedule,
                      steps: int, run_id: str) -> None:
    """Train the fast pairs against the current (possibly noisy) backbone."""
    cfg = state.config
    train = stream.dataset
    for local in range(steps):
        lr = lr_at(schedule, local)
        x, y = stream.next()
        tape = Tape()
        out = forward(state.backbone, state.expert.fast, x, tape)
        node = loss(tape, out, y, train.task_kind)
        value = float(node.value[0, 0])
        if not np.isfinite(value):
            raise TrainingError(
                f"training loss became non-finite at step {state.global_step}")
        grads = tape.backward(node)
        params = _fast_params(state.expert)
        adamw_step(state.optimizer, params,
                   {n: grads[n] for n in params}, lr)
        state.records.append(MetricsRecord(
            run_id=run_id, epoch=state.epoch, step=state.global_step,
            split="train", loss=value, lr=lr))
        state.global_step += 1


def merge_slow(state: RunState) -> None:
    """Retention-average fast into slow, then merge the slow delta."""
    cfg = state.config
    for name, fast in state.expert.fast.items():
        new_slow = ema_update(state.expert.slow[name], fast, cfg.alpha)
        state.expert.slow[name] = new_slow
        merged = delta(new_slow)
        state.backbone.params[name] += merged.astype(
            state.backbone.params[name].dtype, copy=False)
        state.ledger.record_merge(name, merged)


def _merge_fast(state: RunState) -> None:
    # cascade ladder level: the trained pair itself is what lands in the backbone
    for name, fast in state.expert.fast.items():
        merged = delta(fast)
        state.backbone.params[name] += merged.astype(
            state.backbone.params[name].dtype, copy=False)
        state.ledger.record_merge(name, merged)


def _fast_params(expert: ExpertState) -> dict[str, np.ndarray]:
    params = {}
    for name, pair in expert.fast.items():
        params[f"{name}.a"] = pair.a
        params[f"{name}.b"] = pair.b
    return params


def _epoch_eval(state: RunState, task: TaskBundle, run_id: str) -> None:
    from .numkit import frobenius
    sigma = dict(state.ledger.sigma_last) or None
    slow_norm = {n: frobenius(delta(p)) for n, p in state.expert.slow.items()}
    fast_norm = {n: frobenius(delta(p)) for n, p in state.expert.fast.items()}
    for split_name, split in (("val", task.val), ("test", task.test)):
        if split is None or split.n == 0:
            continue
        record = evaluate(state.backbone, None, split, split=split_name,
                          run_id=run_id, epoch=state.epoch, step=state.global_step)
        record.noise_sigma = sigma
        record.slow_norm = slow_norm
        record.fast_norm = fast_norm
        state.records.append(record)


# ---------------------------------------------------------------------------
# run drivers
# ---------------------------------------------------------------------------


def _plan_steps(config: CascadeConfig, stream: BatchStream) -> tuple[int, int]:
    total = config.epochs * stream.steps_per_epoch
    per_expert = config.steps_per_expert or stream.steps_per_epoch
    if per_expert > total:
        per_expert = total
    return total, per_expert


def run_id_for(config: CascadeConfig) -> str:
    tag = config.ladder if config.baseline == "none" else config.baseline
    return f"{tag}-s{config.seed}"


def run(config: CascadeConfig, backbone: Backbone, task: TaskBundle, *,
        resume_state: RunState | None = None, stop_after_epoch: int | None = None,
        epoch_hook=None) -> RunReport:
    """Execute the configured schedule end to end on a copy of the backbone.

    ``resume_state`` continues a checkpointed run from its period boundary;
    ``stop_after_epoch`` halts after that many completed periods (so tests
    can interrupt and resume); ``epoch_hook(state)`` fires after each merge.
    """
    if config.baseline == "cola":
        if resume_state is not None:
            raise ConfigError("checkpoint resume is only supported for cascade runs")
        return run_cola(config, backbone, task)
    if config.ladder == "vanilla":
        if resume_state is not None:
            raise ConfigError("checkpoint resume is only supported for cascade runs")
        return run_vanilla_lora(config, backbone, task)

    run_id = run_id_for(config)
    if resume_state is None:
        state = RunState(config, backbone.copy())
        state.trace += ["init_slow", "clone_fast"]
    else:
        state = resume_state
        if state.config != config:
            raise ConfigError("resume state was produced by a different configuration")
    stream = BatchStream(task.train, config.batch_size, config.seed)
    stream.seek(state.global_step)
    total, per_expert = _plan_steps(config, stream)
    base = Schedule(config.schedule, config.effective_lr(), config.lr_end, total)
    expert_schedule = compressed_schedule(base, per_expert)

    period = state.epoch
    while state.global_step < total:
        period += 1
        if period > 1:
            state.trace.append("reinit_fast")
            reinit_fast(state.expert, state.rng_init)
        noise_before = None
        if config.ladder == "full":
            state.trace.append("apply_noise")
            noise_before = {n: v.copy() for n, v in state.ledger.noise_sum.items()}
            apply_noise(state)
        state.trace.append("reinit_optimizer")
        state.optimizer = reinit_optimizer(
            _fast_params(state.expert), LrPolicy(config.effective_lr(), config.b_lr_ratio),
            weight_decay=config.weight_decay)
        steps = min(per_expert, total - state.global_step)
        state.trace.append("train_expert")
        train_fast_expert(state, stream, expert_schedule, steps, run_id)
        if config.ladder in ("slow", "full"):
            state.trace.append("ema_update")
            state.trace.append("merge_expert")
            merge_slow(state)
        else:
            state.trace.append("merge_expert")
            _merge_fast(state)
        if config.discard_noise and noise_before is not None:
            last = {n: state.ledger.noise_sum[n] - noise_before[n]
                    for n in noise_before}
            _remove_last_noise(state, last)
        state.epoch = period
        state.expert.epoch = period
        state.check_telescope()
        if state.global_step % stream.steps_per_epoch == 0:
            _epoch_eval(state, task, run_id)
        if epoch_hook is not None:
            epoch_hook(state)
        if stop_after_epoch is not None and period >= stop_after_epoch:
            break

    return RunReport(config=config, run_id=run_id, backbone=state.backbone,
                     expert=state.expert, records=state.records, trace=state.trace,
                     ledger=state.ledger, state=state)


def run_vanilla_lora(config: CascadeConfig, backbone: Backbone, task: TaskBundle) -> RunReport:
    """Plain adapter training: one pair over the full schedule, merged once."""
    run_id = f"vanilla-s{config.seed}"
    state = RunState(replace(config, ladder="vanilla"), backbone.copy())
    state.trace.append("init_pair")
    stream = BatchStream(task.train, config.batch_size, config.seed)
    total = config.epochs * stream.steps_per_epoch
    schedule = Schedule(config.schedule, config.lr, config.lr_end, total)
    state.optimizer = reinit_optimizer(
        _fast_params(state.expert), LrPolicy(config.lr, config.b_lr_ratio),
        weight_decay=config.weight_decay)
    state.trace.append("train_expert")
    train = task.train
    for step in range(total):
        lr = lr_at(schedule, step)
        x, y = stream.next()
        tape = Tape()
        out = forward(state.backbone, state.expert.fast, x, tape)
        node = loss(tape, out, y, train.task_kind)
        value = float(node.value[0, 0])
        if not np.isfinite(value):
            raise TrainingError(f"training loss became non-finite at step {step}")
        grads = tape.backward(node)
        params = _fast_params(state.expert)
        adamw_step(state.optimizer, params, {n: grads[n] for n in params}, lr)
        state.records.append(MetricsRecord(
            run_id=run_id, epoch=step // stream.steps_per_epoch, step=step,
            split="train", loss=value, lr=lr))
        state.global_step += 1
        if (step + 1) % stream.steps_per_epoch == 0:
            state.epoch = (step + 1) // stream.steps_per_epoch
            # evaluate with adapters attached; nothing is merged yet
            for split_name, split in (("val", task.val), ("test", task.test)):
                if split is None or split.n == 0:
                    continue
                record = evaluate(state.backbone, state.expert.fast, split,
                                  split=split_name, run_id=run_id,
                                  epoch=state.epoch, step=step + 1)
                state.records.append(record)
    state.trace.append("merge_expert")
    _merge_fast(state)
    state.check_telescope()
    return RunReport(config=config, run_id=run_id, backbone=state.backbone,
                     expert=state.expert, records=state.records, trace=state.trace,
                     ledger=state.ledger, state=state)


def run_cola(config: CascadeConfig, backbone: Backbone, task: TaskBundle) -> RunReport:
    """Chain baseline: merge each trained pair, restart optimizer and pair.

    No retention averaging, no noise. Deliberately a separate, simpler loop;
    the full engine at retention 0 with noise 0 must match it bit for bit.
    """
    run_id = f"cola-s{config.seed}"
    state = RunState(replace(config, baseline="cola"), backbone.copy())
    state.trace += ["init_pair", "clone_fast"]
    stream = BatchStream(task.train, config.batch_size, config.seed)
    total, per_expert = _plan_steps(config, stream)
    base = Schedule(config.schedule, config.effective_lr(), config.lr_end, total)
    schedule = compressed_schedule(base, per_expert)
    train = task.train
    step = 0
    period = 0
    while step < total:
        period += 1
        if period > 1:
            state.trace.append("reinit_fast")
            reinit_fast(state.expert, state.rng_init)
        state.trace.append("reinit_optimizer")
        state.optimizer = reinit_optimizer(
            _fast_params(state.expert), LrPolicy(config.effective_lr(), config.b_lr_ratio),
            weight_decay=config.weight_decay)
        steps = min(per_expert, total - step)
        state.trace.append("train_expert")
        for local in range(steps):
            lr = lr_at(schedule, local)
            x, y = stream.next()
            tape = Tape()
            out = forward(state.backbone, state.expert.fast, x, tape)
            node = loss(tape, out, y, train.task_kind)
            value = float(node.value[0, 0])
            if not np.isfinite(value):
                raise TrainingError(f"training loss became non-finite at step {step}")
            grads = tape.backward(node)
            params = _fast_params(state.expert)
            adamw_step(state.optimizer, params, {n: grads[n] for n in params}, lr)
            state.records.append(MetricsRecord(
                run_id=run_id, epoch=period - 1, step=step, split="train",
                loss=value, lr=lr))
            step += 1
            state.global_step = step
        state.trace.append("merge_expert")
        _merge_fast(state)
        state.epoch = period
        state.check_telescope()
        if step % stream.steps_per_epoch == 0:
            _epoch_eval(state, task, run_id)
    return RunReport(config=config, run_id=run_id, backbone=state.backbone,
                     expert=state.expert, records=state.records, trace=state.trace,
                     ledger=state.ledger, state=state)
