"""Synthetic transfer tasks, file ingestion, splits, and corruptions.

The teacher-student generator draws inputs from a standard Gaussian and
labels them with an exact-rank linear teacher, so rank-growth claims can be
checked against analytic ground truth. A narrow task derived from a broad
one shares the broad teacher plus a small low-rank residual, which is
precisely the kind of update a low-rank adapter can express.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConfigError, DataError
from .numkit import RngState, default_dtype
from .numkit.rng import substream_id

TASK_KINDS = ("regression", "classification", "sequence")
CORRUPTION_KINDS = ("gaussian_input", "feature_mask", "covariate_shift")
SEQUENCE_KINDS = ("majority", "first")


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    task_kind: str
    provenance: str = ""

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.task_kind!r}")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DataError(
                f"inputs ({self.inputs.shape[0]}) and targets ({self.targets.shape[0]}) "
                "have different example counts")
        if self.task_kind != "regression" and self.targets.size:
            if self.targets.min() < 0:
                raise DataError("class labels must be non-negative")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def copy(self) -> "Dataset":
        return Dataset(self.inputs.copy(), self.targets.copy(), self.task_kind,
                       self.provenance)

    def take(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx].copy(), self.targets[idx].copy(),
                       self.task_kind, self.provenance)


@dataclass(frozen=True)
class SplitSpec:
    n_train: int = 1000
    n_val: int = 500
    n_test: int = 1000
    seed: int = 0

    @property
    def total(self) -> int:
        return self.n_train + self.n_val + self.n_test


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ConfigError(f"unknown corruption kind {self.kind!r}")
        if self.severity < 0:
            raise ArgumentError(f"corruption severity must be >= 0, got {self.severity}")

    @property
    def label(self) -> str:
        return f"corrupted:{self.kind}:{self.severity:g}"


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def make_teacher(seed: int, input_dim: int, output_dim: int, rank: int) -> np.ndarray:
    """Exact-rank linear map, scaled so outputs of N(0,1) inputs are O(1)."""
    if rank < 1 or rank > min(input_dim, output_dim):
        raise ArgumentError(
            f"teacher rank {rank} out of range [1, {min(input_dim, output_dim)}]")
    rng = RngState(seed, "teacher")
    u = rng.normal((output_dim, rank))
    v = rng.normal((rank, input_dim))
    return (u @ v) / np.sqrt(rank * input_dim)


def gen_teacher_student(seed: int, n: int, input_dim: int, output_dim: int,
                        teacher_rank: int, label_noise: float = 0.0,
                        teacher: np.ndarray | None = None) -> Dataset:
    """Gaussian inputs labelled by an exact-rank teacher plus Gaussian noise."""
    if teacher is None:
        teacher = make_teacher(seed, input_dim, output_dim, teacher_rank)
    rng = RngState(seed, "examples")
    dtype = default_dtype()
    x = rng.normal((n, input_dim))
    y = x @ teacher.T
    if label_noise > 0.0:
        y = y + rng.normal((n, output_dim), label_noise)
    return Dataset(x.astype(dtype), y.astype(dtype), "regression",
                   provenance=f"teacher_student(seed={seed})")


def _majority_label(row: np.ndarray, vocab: int) -> int:
    # first token to reach the winning count wins ties, which keeps the
    # label distribution symmetric across the vocabulary
    counts = np.zeros(vocab, dtype=np.int64)
    best, best_count = 0, 0
    for tok in row:
        counts[tok] += 1
        if counts[tok] > best_count:
            best, best_count = int(tok), int(counts[tok])
    return best


def gen_sequence_task(seed: int, n: int, seq_len: int, vocab: int,
                      kind: str = "majority") -> Dataset:
    """Token-sequence classification with exactly computable labels."""
    if vocab < 2:
        raise ArgumentError(f"vocab must be >= 2, got {vocab}")
    if kind not in SEQUENCE_KINDS:
        raise ConfigError(f"unknown sequence task kind {kind!r}; expected {SEQUENCE_KINDS}")
    rng = RngState(seed, "examples")
    tokens = rng.integers(0, vocab, (n, seq_len)).astype(np.int64)
    if kind == "majority":
        labels = np.array([_majority_label(row, vocab) for row in tokens], dtype=np.int64)
    else:
        labels = tokens[:, 0].copy()
    return Dataset(tokens, labels, "sequence", provenance=f"sequence:{kind}(seed={seed})")


def split_dataset(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint, exhaustive train/val/test over the drawn pool."""
    if dataset.n != spec.total:
        raise DataError(f"pool has {dataset.n} examples, splits need {spec.total}")
    perm = RngState(spec.seed, "datagen").permutation(dataset.n)
    a, b = spec.n_train, spec.n_train + spec.n_val
    return dataset.take(perm[:a]), dataset.take(perm[a:b]), dataset.take(perm[b:])


# ---------------------------------------------------------------------------
# file ingestion (jsonl / csv)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TableSchema:
    task_kind: str
    input_dim: int
    output_dim: int = 1


def _finish_table(rows_x, rows_y, schema: TableSchema, path) -> Dataset:
    dtype = default_dtype()
    if not rows_x:
        x = np.zeros((0, schema.input_dim), dtype=dtype)
        if schema.task_kind == "regression":
            y = np.zeros((0, schema.output_dim), dtype=dtype)
        else:
            y = np.zeros((0,), dtype=np.int64)
        return Dataset(x, y, schema.task_kind, provenance=str(path))
    x = np.asarray(rows_x, dtype=dtype)
    if schema.task_kind == "regression":
        y = np.asarray(rows_y, dtype=dtype)
    else:
        y = np.asarray(rows_y, dtype=np.int64)
    return Dataset(x, y, schema.task_kind, provenance=str(path))


def _check_row(x, y, schema: TableSchema, lineno: int):
    if len(x) != schema.input_dim:
        raise DataError(f"line {lineno}: expected {schema.input_dim} features, got {len(x)}")
    if not all(np.isfinite(v) for v in x):
        raise DataError(f"line {lineno}: non-finite feature value")
    if schema.task_kind == "regression":
        if len(y) != schema.output_dim:
            raise DataError(f"line {lineno}: expected {schema.output_dim} targets, got {len(y)}")
        if not all(np.isfinite(v) for v in y):
            raise DataError(f"line {lineno}: non-finite target value")


def load_table(path, fmt: str, schema: TableSchema) -> Dataset:
    """Parse a jsonl or csv table; row order is preserved."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"table file not found: {path}")
    rows_x, rows_y = [], []
    if fmt == "jsonl":
        with path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"line {lineno}: malformed json ({exc.msg})") from exc
                if "x" not in obj or "y" not in obj:
                    raise DataError(f"line {lineno}: row must carry 'x' and 'y'")
                x = [float(v) for v in obj["x"]]
                y = ([float(v) for v in obj["y"]] if schema.task_kind == "regression"
                     else int(obj["y"]))
                _check_row(x, y if schema.task_kind == "regression" else [0.0], schema, lineno)
                rows_x.append(x)
                rows_y.append(y)
    elif fmt == "csv":
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                return _finish_table([], [], schema, path)
            expect = [f"x{i}" for i in range(schema.input_dim)]
            expect += ([f"y{i}" for i in range(schema.output_dim)]
                       if schema.task_kind == "regression" else ["label"])
            if header != expect:
                missing = [c for c in expect if c not in header]
                raise DataError(f"csv schema mismatch, missing columns {missing}" if missing
                                else f"csv schema mismatch: {header} vs {expect}")
            for lineno, cells in enumerate(reader, start=2):
                if len(cells) != len(expect):
                    raise DataError(f"line {lineno}: expected {len(expect)} cells, got {len(cells)}")
                try:
                    x = [float(v) for v in cells[:schema.input_dim]]
                    tail = cells[schema.input_dim:]
                    y = ([float(v) for v in tail] if schema.task_kind == "regression"
                         else int(tail[0]))
                except ValueError as exc:
                    raise DataError(f"line {lineno}: unparsable number ({exc})") from exc
                _check_row(x, y if schema.task_kind == "regression" else [0.0], schema, lineno)
                rows_x.append(x)
                rows_y.append(y)
    else:
        raise ConfigError(f"unknown table format {fmt!r}; expected jsonl or csv")
    return _finish_table(rows_x, rows_y, schema, path)


def save_table(dataset: Dataset, path, fmt: str) -> None:
    if dataset.task_kind == "sequence":
        raise ConfigError("sequence datasets have no table form")
    path = Path(path)
    if fmt == "jsonl":
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for i in range(dataset.n):
                y = (dataset.targets[i].tolist() if dataset.task_kind == "regression"
                     else int(dataset.targets[i]))
                fh.write(json.dumps({"x": dataset.inputs[i].tolist(), "y": y}) + "\n")
    elif fmt == "csv":
        d = dataset.inputs.shape[1]
        header = [f"x{i}" for i in range(d)]
        if dataset.task_kind == "regression":
            header += [f"y{i}" for i in range(dataset.targets.shape[1])]
        else:
            header += ["label"]
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i in range(dataset.n):
                row = [repr(float(v)) for v in dataset.inputs[i]]
                if dataset.task_kind == "regression":
                    row += [repr(float(v)) for v in dataset.targets[i]]
                else:
                    row += [str(int(dataset.targets[i]))]
                writer.writerow(row)
    else:
        raise ConfigError(f"unknown table format {fmt!r}; expected jsonl or csv")


# ---------------------------------------------------------------------------
# corruption transforms
# ---------------------------------------------------------------------------


def corrupt(dataset: Dataset, spec: CorruptionSpec) -> Dataset:
    """Transformed copy of the dataset; the original is never touched."""
    if dataset.task_kind == "sequence":
        raise ConfigError(f"corruption {spec.kind!r} does not apply to token sequences")
    out = dataset.copy()
    out.provenance = f"{dataset.provenance}|{spec.label}"
    if spec.severity == 0:
        return out
    rng = RngState(spec.seed, "corrupt")
    if spec.kind == "gaussian_input":
        out.inputs = (out.inputs + rng.normal(out.inputs.shape, spec.severity)
                      .astype(out.inputs.dtype))
    elif spec.kind == "feature_mask":
        keep = rng.uniform(out.inputs.shape) >= spec.severity
        out.inputs = out.inputs * keep.astype(out.inputs.dtype)
    else:  # covariate_shift: one fixed offset direction across all examples
        shift = rng.normal((1, out.inputs.shape[1]), spec.severity)
        out.inputs = out.inputs + shift.astype(out.inputs.dtype)
    return out


# ---------------------------------------------------------------------------
# deterministic batch order
# ---------------------------------------------------------------------------


class BatchStream:
    """Deterministic epoch-shuffled minibatches, addressable by global step.

    The permutation for data epoch e is a pure function of (seed, stream,
    e), so a stream pointed at any step emits exactly what an uninterrupted
    stream would have emitted there; checkpoints only need the step counter.
    Examples that do not fill a whole batch are dropped, so
    steps_per_epoch = n // batch_size.
    """

    def __init__(self, dataset: Dataset, batch_size: int, seed: int,
                 stream: str = "batch-order"):
        if batch_size < 1:
            raise ArgumentError(f"batch size must be >= 1, got {batch_size}")
        if batch_size > dataset.n:
            raise ArgumentError(f"batch size {batch_size} exceeds dataset size {dataset.n}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = int(seed)
        self.stream = stream
        self.steps_per_epoch = dataset.n // batch_size
        self._global = 0
        self._cached_epoch = None
        self._perm = None

    def seek(self, global_step: int) -> None:
        if global_step < 0:
            raise ArgumentError(f"stream position must be >= 0, got {global_step}")
        self._global = global_step

    def next(self) -> tuple[np.ndarray, np.ndarray]:
        epoch, pos = divmod(self._global, self.steps_per_epoch)
        if self._cached_epoch != epoch:
            rng = RngState(self.seed, substream_id(self.stream, epoch))
            self._perm = rng.permutation(self.dataset.n)
            self._cached_epoch = epoch
        i0 = pos * self.batch_size
        idx = self._perm[i0:i0 + self.batch_size]
        self._global += 1
        return self.dataset.inputs[idx], self.dataset.targets[idx]
