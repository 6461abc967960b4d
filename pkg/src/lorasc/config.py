"""Run configuration: flat key-value files, CLI overrides, task assembly.

The config format is deliberately dumb: one ``section.key = value`` per
line, ``#`` comments, no nesting. Unknown keys are rejected by name and
every value is type-checked against the key table below, so a serialized
config plus a seed pins a run exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

from .cascade import CascadeConfig, TaskBundle
from .data import (CorruptionSpec, SplitSpec, TableSchema, gen_sequence_task,
                   gen_teacher_student, load_table, make_teacher, split_dataset)
from .errors import ConfigError, DataError
from .model import ModelConfig
from .numkit import RngState

DATA_KINDS = ("teacher_student", "sequence", "table")

# decorrelate the auxiliary generators from the pool generator
_RESIDUAL_SALT = 0x5DEECE66D
_PRETRAIN_SALT = 0x2545F4914F6CDD1D
_SEED_MASK = (1 << 63) - 1


@dataclass(frozen=True)
class DataSpec:
    kind: str = "teacher_student"
    teacher_rank: int = 8
    label_noise: float = 0.0        # applied to the training split only
    residual_rank: int = 4          # low-rank gap between broad and narrow task
    residual_scale: float = 0.5
    pretrain_n: int = 2048
    pretrain_steps: int = 400
    pretrain_lr: float = 5e-3
    seq_len: int = 12
    vocab: int = 8
    path: str = ""
    format: str = "jsonl"
    table_kind: str = "regression"
    corruptions: tuple[CorruptionSpec, ...] = ()

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ConfigError(f"data.kind must be one of {DATA_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    data: DataSpec
    split: SplitSpec
    cascade: CascadeConfig
    out_dir: str = "runs"
    seeds: tuple[int, ...] = (0,)
    precision: str = "f32"
    checkpoint_every: int = 0  # 0: final checkpoint only

    def for_seed(self, seed: int) -> "RunConfig":
        return replace(self, model=replace(self.model, seed=seed),
                       cascade=replace(self.cascade, seed=seed), seeds=(seed,))


# ---------------------------------------------------------------------------
# key table
# ---------------------------------------------------------------------------

# name -> (type tag, default); "optint"/"optfloat" admit an empty value
_KEYS: dict[str, tuple[str, object]] = {
    "model.mode": ("str", "mlp"),
    "model.depth": ("int", 2),
    "model.d_model": ("int", 32),
    "model.heads": ("int", 4),
    "model.input_dim": ("int", 16),
    "model.output_dim": ("int", 8),
    "data.kind": ("str", "teacher_student"),
    "data.teacher_rank": ("int", 8),
    "data.label_noise": ("float", 0.0),
    "data.residual_rank": ("int", 4),
    "data.residual_scale": ("float", 0.5),
    "data.pretrain_n": ("int", 2048),
    "data.pretrain_steps": ("int", 400),
    "data.pretrain_lr": ("float", 5e-3),
    "data.seq_len": ("int", 12),
    "data.vocab": ("int", 8),
    "data.path": ("str", ""),
    "data.format": ("str", "jsonl"),
    "data.table_kind": ("str", "regression"),
    "data.corruptions": ("str", ""),
    "split.n_train": ("int", 1000),
    "split.n_val": ("int", 500),
    "split.n_test": ("int", 1000),
    "cascade.alpha": ("float", 0.5),
    "cascade.lambda": ("float", 0.1),
    "cascade.rank": ("int", 8),
    "cascade.lora_alpha": ("optfloat", None),
    "cascade.epochs": ("int", 5),
    "cascade.steps_per_expert": ("optint", None),
    "cascade.ladder": ("str", "full"),
    "cascade.baseline": ("str", "none"),
    "cascade.discard_noise": ("bool", False),
    "cascade.batch_size": ("int", 4),
    "optim.lr": ("float", 1e-3),
    "optim.lr_end": ("float", 0.0),
    "optim.schedule": ("str", "linear"),
    "optim.b_lr_ratio": ("float", 1.0),
    "optim.cascade_lr_scale": ("float", 1.0),
    "optim.weight_decay": ("float", 0.0),
    "run.out": ("str", "runs"),
    "run.seeds": ("str", "0"),
    "run.precision": ("str", "f32"),
    "run.checkpoint_every": ("int", 0),
}

_BOOL_WORDS = {"true": True, "1": True, "yes": True,
               "false": False, "0": False, "no": False}


def _coerce(key: str, raw, kind: str):
    if not isinstance(raw, str):
        return raw  # already typed (programmatic override)
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "optint":
            return None if raw == "" else int(raw)
        if kind == "optfloat":
            return None if raw == "" else float(raw)
        if kind == "bool":
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError(raw)
            return _BOOL_WORDS[raw.lower()]
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r} expects {kind}, got {raw!r}") from exc


def _parse_corruptions(text: str) -> tuple[CorruptionSpec, ...]:
    if not text.strip():
        return ()
    specs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 2:
            raise ConfigError(
                f"data.corruptions entries must be kind:severity, got {chunk!r}")
        specs.append(CorruptionSpec(kind=parts[0].strip(), severity=float(parts[1])))
    return tuple(specs)


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s.strip()) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"run.seeds must be comma-separated integers, got {text!r}") from exc
    if not seeds:
        raise ConfigError("run.seeds must list at least one seed")
    return seeds


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then CLI overrides; unknown keys rejected."""
    values = {key: default for key, (_, default) in _KEYS.items()}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, raw, _KEYS[key][0])
    for key, raw in (overrides or {}).items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw, _KEYS[key][0])
    return _assemble(values)


def _assemble(v: dict) -> RunConfig:
    if v["run.precision"] not in ("f32", "f64"):
        raise ConfigError(f"run.precision must be f32 or f64, got {v['run.precision']!r}")
    model = ModelConfig(mode=v["model.mode"], depth=v["model.depth"],
                        d_model=v["model.d_model"], heads=v["model.heads"],
                        input_dim=v["model.input_dim"], output_dim=v["model.output_dim"],
                        seed=0)
    data = DataSpec(kind=v["data.kind"], teacher_rank=v["data.teacher_rank"],
                    label_noise=v["data.label_noise"],
                    residual_rank=v["data.residual_rank"],
                    residual_scale=v["data.residual_scale"],
                    pretrain_n=v["data.pretrain_n"],
                    pretrain_steps=v["data.pretrain_steps"],
                    pretrain_lr=v["data.pretrain_lr"], seq_len=v["data.seq_len"],
                    vocab=v["data.vocab"], path=v["data.path"], format=v["data.format"],
                    table_kind=v["data.table_kind"],
                    corruptions=_parse_corruptions(v["data.corruptions"]))
    split = SplitSpec(n_train=v["split.n_train"], n_val=v["split.n_val"],
                      n_test=v["split.n_test"], seed=0)
    cascade = CascadeConfig(alpha=v["cascade.alpha"],
                            noise_intensity=v["cascade.lambda"],
                            rank=v["cascade.rank"], lora_alpha=v["cascade.lora_alpha"],
                            epochs=v["cascade.epochs"],
                            steps_per_expert=v["cascade.steps_per_expert"],
                            ladder=v["cascade.ladder"], baseline=v["cascade.baseline"],
                            discard_noise=v["cascade.discard_noise"],
                            batch_size=v["cascade.batch_size"], lr=v["optim.lr"],
                            lr_end=v["optim.lr_end"], schedule=v["optim.schedule"],
                            b_lr_ratio=v["optim.b_lr_ratio"],
                            cascade_lr_scale=v["optim.cascade_lr_scale"],
                            weight_decay=v["optim.weight_decay"], seed=0)
    return RunConfig(model=model, data=data, split=split, cascade=cascade,
                     out_dir=v["run.out"], seeds=_parse_seeds(v["run.seeds"]),
                     precision=v["run.precision"],
                     checkpoint_every=v["run.checkpoint_every"])


# ---------------------------------------------------------------------------
# serialization (canonical, diffable, reparseable)
# ---------------------------------------------------------------------------


def _flatten(cfg: RunConfig) -> dict[str, str]:
    def fmt(value):
        if value is None:
            return ""
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return repr(value)
        return str(value)

    c, d, m, s = cfg.cascade, cfg.data, cfg.model, cfg.split
    return {
        "model.mode": m.mode, "model.depth": fmt(m.depth),
        "model.d_model": fmt(m.d_model), "model.heads": fmt(m.heads),
        "model.input_dim": fmt(m.input_dim), "model.output_dim": fmt(m.output_dim),
        "data.kind": d.kind, "data.teacher_rank": fmt(d.teacher_rank),
        "data.label_noise": fmt(d.label_noise),
        "data.residual_rank": fmt(d.residual_rank),
        "data.residual_scale": fmt(d.residual_scale),
        "data.pretrain_n": fmt(d.pretrain_n),
        "data.pretrain_steps": fmt(d.pretrain_steps),
        "data.pretrain_lr": fmt(d.pretrain_lr), "data.seq_len": fmt(d.seq_len),
        "data.vocab": fmt(d.vocab), "data.path": d.path, "data.format": d.format,
        "data.table_kind": d.table_kind,
        "data.corruptions": ",".join(f"{sp.kind}:{sp.severity:g}" for sp in d.corruptions),
        "split.n_train": fmt(s.n_train), "split.n_val": fmt(s.n_val),
        "split.n_test": fmt(s.n_test),
        "cascade.alpha": fmt(c.alpha), "cascade.lambda": fmt(c.noise_intensity),
        "cascade.rank": fmt(c.rank), "cascade.lora_alpha": fmt(c.lora_alpha),
        "cascade.epochs": fmt(c.epochs),
        "cascade.steps_per_expert": fmt(c.steps_per_expert),
        "cascade.ladder": c.ladder, "cascade.baseline": c.baseline,
        "cascade.discard_noise": fmt(c.discard_noise),
        "cascade.batch_size": fmt(c.batch_size),
        "optim.lr": fmt(c.lr), "optim.lr_end": fmt(c.lr_end),
        "optim.schedule": c.schedule, "optim.b_lr_ratio": fmt(c.b_lr_ratio),
        "optim.cascade_lr_scale": fmt(c.cascade_lr_scale),
        "optim.weight_decay": fmt(c.weight_decay),
        "run.out": cfg.out_dir, "run.seeds": ",".join(str(x) for x in cfg.seeds),
        "run.precision": cfg.precision,
        "run.checkpoint_every": fmt(cfg.checkpoint_every),
    }


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"{key} = {value}" for key, value in _flatten(cfg).items()]
    return "\n".join(lines) + "\n"


def config_digest(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# task assembly
# ---------------------------------------------------------------------------


def _salted(seed: int, salt: int) -> int:
    return (seed ^ salt) & _SEED_MASK


def build_task(model: ModelConfig, data: DataSpec, split: SplitSpec,
               seed: int) -> TaskBundle:
    """Materialize the splits (and the broad pretraining set) for one seed."""
    split = replace(split, seed=seed)
    if data.kind == "teacher_student":
        broad = make_teacher(seed, model.input_dim, model.output_dim, data.teacher_rank)
        narrow = broad
        if data.residual_rank > 0 and data.residual_scale > 0:
            narrow = broad + data.residual_scale * make_teacher(
                _salted(seed, _RESIDUAL_SALT), model.input_dim, model.output_dim,
                data.residual_rank)
        pool = gen_teacher_student(seed, split.total, model.input_dim,
                                   model.output_dim, data.teacher_rank,
                                   label_noise=0.0, teacher=narrow)
        train, val, test = split_dataset(pool, split)
        if data.label_noise > 0:
            rng = RngState(seed, "label-noise")
            noise = rng.normal(train.targets.shape, data.label_noise)
            train.targets = train.targets + noise.astype(train.targets.dtype)
        pretrain = None
        if data.pretrain_n > 0 and data.pretrain_steps > 0:
            pretrain = gen_teacher_student(_salted(seed, _PRETRAIN_SALT),
                                           data.pretrain_n, model.input_dim,
                                           model.output_dim, data.teacher_rank,
                                           label_noise=0.0, teacher=broad)
        return TaskBundle(train=train, val=val, test=test, pretrain=pretrain)
    if data.kind == "sequence":
        pool = gen_sequence_task(seed, split.total, data.seq_len, data.vocab)
        train, val, test = split_dataset(pool, split)
        pretrain = None
        if data.pretrain_n > 0 and data.pretrain_steps > 0:
            pretrain = gen_sequence_task(_salted(seed, _PRETRAIN_SALT),
                                         data.pretrain_n, data.seq_len, data.vocab)
        return TaskBundle(train=train, val=val, test=test, pretrain=pretrain)
    # table
    if not data.path:
        raise ConfigError("data.kind=table needs data.path")
    schema = TableSchema(task_kind=data.table_kind, input_dim=model.input_dim,
                         output_dim=model.output_dim)
    pool = load_table(data.path, data.format, schema)
    if pool.n != split.total:
        raise DataError(f"table has {pool.n} rows, splits need {split.total}")
    train, val, test = split_dataset(pool, split)
    return TaskBundle(train=train, val=val, test=test, pretrain=None)
