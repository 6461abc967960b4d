"""Tiny trainable backbones with named, adapter-ready projection matrices.

Two modes share one forward path:

* mlp - ``depth`` hidden layers of width ``d_model`` plus a linear head;
  the per-layer matrix is the default adaptation target.
* transformer - a pre-norm encoder stack (softmax attention + 2-layer MLP)
  over token sequences, mean-pooled into a classifier head; the q and v
  projections of every attention layer are the default targets.

Weights are plain (out, in) matrices applied as ``x @ W.T``. An adapter on a
target W contributes ``scaling * (x @ A.T) @ B.T`` on top of the frozen
product, so merged and adapter forms agree up to rounding. Backbone matrices
are registered on the tape as constants unless a pretraining pass asks for
them, which is the only situation where they receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import BatchStream, Dataset
from .errors import ConfigError, ShapeError, TrainingError
from .numkit import RngState, Tape, default_dtype
from .optim import LrPolicy, adamw_step, reinit_optimizer

MODES = ("mlp", "transformer")


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "mlp"
    depth: int = 2
    d_model: int = 32
    heads: int = 4
    input_dim: int = 16  # feature count, or vocabulary size in transformer mode
    output_dim: int = 8  # regression width, or class count
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"model.mode must be one of {MODES}, got {self.mode!r}")
        for name in ("depth", "d_model", "heads", "input_dim", "output_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be positive, got {getattr(self, name)}")
        if self.mode == "transformer" and self.d_model % self.heads != 0:
            raise ConfigError(
                f"model.d_model ({self.d_model}) must be divisible by model.heads ({self.heads})")


@dataclass
class Backbone:
    """Named parameter map plus the default adaptation targets."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    target_names: list[str] = field(default_factory=list)

    def copy(self) -> "Backbone":
        return Backbone(self.config, {k: v.copy() for k, v in self.params.items()},
                        list(self.target_names))

    def target_shapes(self, names=None) -> dict[str, tuple[int, int]]:
        names = self.target_names if names is None else names
        missing = [n for n in names if n not in self.params]
        if missing:
            raise ShapeError(f"targets not present in backbone: {missing}")
        return {n: self.params[n].shape for n in names}

    def checksum(self) -> float:
        return float(sum(np.sum(np.asarray(v, dtype=np.float64) ** 2)
                         for v in self.params.values()))


def _param_layout(config: ModelConfig) -> dict[str, tuple[int, int]]:
    d = config.d_model
    layout: dict[str, tuple[int, int]] = {}
    if config.mode == "mlp":
        fan_in = config.input_dim
        for i in range(config.depth):
            layout[f"layer{i}.w"] = (d, fan_in)
            fan_in = d
        layout["head"] = (config.output_dim, d)
    else:
        layout["embed"] = (config.input_dim, d)
        for i in range(config.depth):
            layout[f"layer{i}.attn.wq"] = (d, d)
            layout[f"layer{i}.attn.wk"] = (d, d)
            layout[f"layer{i}.attn.wv"] = (d, d)
            layout[f"layer{i}.attn.wo"] = (d, d)
            layout[f"layer{i}.ffn.w1"] = (2 * d, d)
            layout[f"layer{i}.ffn.w2"] = (d, 2 * d)
        layout["head"] = (config.output_dim, d)
    return layout


def default_targets(config: ModelConfig) -> list[str]:
    if config.mode == "mlp":
        return [f"layer{i}.w" for i in range(config.depth)]
    return [name for i in range(config.depth)
            for name in (f"layer{i}.attn.wq", f"layer{i}.attn.wv")]


def build(config: ModelConfig) -> Backbone:
    """Deterministic fan-in Gaussian init from the config seed."""
    rng = RngState(config.seed, "model-init")
    dtype = default_dtype()
    params = {}
    for name, (rows, cols) in _param_layout(config).items():
        fan_in = cols if name != "embed" else config.d_model
        std = 1.0 / np.sqrt(fan_in)
        params[name] = rng.normal((rows, cols), std).astype(dtype)
    return Backbone(config, params, default_targets(config))


# ---------------------------------------------------------------------------
# forward / loss
# ---------------------------------------------------------------------------


def _project(tape, x, wnode, pair_state):
    """x @ W.T, plus the low-rank contribution when the target is adapted."""
    out = tape.matmul(x, tape.transpose(wnode))
    if pair_state is not None:
        a_node, b_node, scaling = pair_state
        low = tape.matmul(tape.matmul(x, tape.transpose(a_node)), tape.transpose(b_node))
        if scaling != 1.0:
            low = tape.scale(low, scaling)
        out = tape.add(out, low)
    return out


def forward(backbone: Backbone, adapters, batch, tape: Tape,
            train_backbone: bool = False):
    """Batch forward; returns the output node recorded on ``tape``.

    ``adapters`` maps target names to LoraPair; adapted targets compute
    W0 x + scaling * B (A x), everything else computes W0 x.
    """
    config = backbone.config
    adapters = adapters or {}
    wnodes = {}
    for name, w in backbone.params.items():
        wnodes[name] = tape.param(name, w) if train_backbone else tape.constant(w)
    pnodes = {}
    for tgt, pair in adapters.items():
        if tgt not in backbone.params:
            raise ShapeError(f"adapter target {tgt!r} not found in backbone")
        if pair.shape != backbone.params[tgt].shape:
            raise ShapeError(
                f"adapter shape {pair.shape} does not match target {tgt!r} "
                f"{backbone.params[tgt].shape}")
        pnodes[tgt] = (tape.param(f"{tgt}.a", pair.a), tape.param(f"{tgt}.b", pair.b),
                       pair.scaling)

    if config.mode == "mlp":
        x = np.asarray(batch)
        if x.ndim != 2 or x.shape[1] != config.input_dim:
            raise ShapeError(f"mlp batch must be (n, {config.input_dim}), got {x.shape}")
        h = tape.constant(x)
        for i in range(config.depth):
            h = _project(tape, h, wnodes[f"layer{i}.w"], pnodes.get(f"layer{i}.w"))
            h = tape.relu(h)
        return _project(tape, h, wnodes["head"], pnodes.get("head"))

    tokens = np.asarray(batch)
    if tokens.ndim != 2:
        raise ShapeError(f"transformer batch must be (n, seq_len), got {tokens.shape}")
    if tokens.min(initial=0) < 0 or tokens.max(initial=0) >= config.input_dim:
        raise ShapeError(f"token ids must lie in [0, {config.input_dim})")
    d = config.d_model
    head_dim = d // config.heads
    inv_sqrt = 1.0 / np.sqrt(head_dim)
    pooled = []
    for row in tokens:
        x = tape.gather_rows(wnodes["embed"], row)
        for i in range(config.depth):
            ln = tape.rmsnorm(x)
            q = _project(tape, ln, wnodes[f"layer{i}.attn.wq"], pnodes.get(f"layer{i}.attn.wq"))
            k = _project(tape, ln, wnodes[f"layer{i}.attn.wk"], pnodes.get(f"layer{i}.attn.wk"))
            v = _project(tape, ln, wnodes[f"layer{i}.attn.wv"], pnodes.get(f"layer{i}.attn.wv"))
            outs = []
            for h in range(config.heads):
                j0, j1 = h * head_dim, (h + 1) * head_dim
                qh = tape.slice_cols(q, j0, j1)
                kh = tape.slice_cols(k, j0, j1)
                vh = tape.slice_cols(v, j0, j1)
                scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt)
                outs.append(tape.matmul(tape.softmax_rows(scores), vh))
            attn = tape.concat_cols(outs)
            x = tape.add(x, _project(tape, attn, wnodes[f"layer{i}.attn.wo"],
                                     pnodes.get(f"layer{i}.attn.wo")))
            ln2 = tape.rmsnorm(x)
            f1 = tape.relu(_project(tape, ln2, wnodes[f"layer{i}.ffn.w1"],
                                    pnodes.get(f"layer{i}.ffn.w1")))
            x = tape.add(x, _project(tape, f1, wnodes[f"layer{i}.ffn.w2"],
                                     pnodes.get(f"layer{i}.ffn.w2")))
        pooled.append(tape.mean_rows(x))
    stacked = pooled[0] if len(pooled) == 1 else tape.concat_rows(pooled)
    return _project(tape, stacked, wnodes["head"], pnodes.get("head"))


def loss(tape: Tape, outputs, targets, task_kind: str):
    """Scalar loss node: MSE for regression, mean cross-entropy otherwise."""
    if task_kind == "regression":
        return tape.mse(outputs, np.asarray(targets))
    if task_kind in ("classification", "sequence"):
        return tape.cross_entropy(outputs, targets)
    raise ConfigError(f"unknown task kind {task_kind!r}")


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------


def _check_head_matches(config: ModelConfig, data: Dataset) -> None:
    if data.task_kind == "regression":
        if data.targets.shape[1] != config.output_dim:
            raise ConfigError(
                f"regression targets have width {data.targets.shape[1]}, "
                f"model head expects {config.output_dim}")
    else:
        top = int(np.max(data.targets)) if data.n else 0
        if top >= config.output_dim:
            raise ConfigError(
                f"labels reach {top} but model head has {config.output_dim} classes")
    if data.task_kind == "sequence" and config.mode != "transformer":
        raise ConfigError("sequence data requires transformer mode")


def pretrain_backbone(backbone: Backbone, data: Dataset, steps: int,
                      lr: float = 5e-3, batch_size: int = 32) -> Backbone:
    """Full-parameter training on a broad task; the result becomes the frozen base.

    steps=0 leaves the backbone untouched. A NaN loss aborts with the last
    finite loss in the message.
    """
    if steps == 0:
        return backbone
    _check_head_matches(backbone.config, data)
    stream = BatchStream(data, min(batch_size, data.n), backbone.config.seed,
                         stream="pretrain")
    opt = reinit_optimizer(backbone.params, LrPolicy(lr))
    last_finite = None
    for step in range(steps):
        x, y = stream.next()
        tape = Tape()
        out = forward(backbone, None, x, tape, train_backbone=True)
        node = loss(tape, out, y, data.task_kind)
        value = float(node.value[0, 0])
        if not np.isfinite(value):
            raise TrainingError(
                f"pretraining diverged at step {step}; last finite loss {last_finite}")
        last_finite = value
        grads = tape.backward(node)
        adamw_step(opt, backbone.params, grads, lr)
    return backbone
