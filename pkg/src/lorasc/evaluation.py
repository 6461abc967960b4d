"""Metrics, effective-rank diagnostics, and machine-readable reports.

Reports are plot-ready data only; figure rendering lives with the CLI.
Float cells are written with ``repr`` and dict-valued cells as canonical
JSON, so a written report loads back exactly.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConfigError, NumericError
from .model import Backbone, forward, loss
from .numkit import Tape, singular_values

SPLITS = ("train", "val", "test")  # plus "corrupted:<kind>:<severity>"

CSV_COLUMNS = ("run_id", "epoch", "step", "split", "loss", "accuracy", "lr",
               "noise_sigma", "slow_norm", "fast_norm")


@dataclass
class MetricsRecord:
    """One row of the training/eval log."""

    run_id: str
    epoch: int
    step: int
    split: str
    loss: float
    accuracy: float | None = None
    lr: float | None = None
    noise_sigma: dict[str, float] | None = None
    slow_norm: dict[str, float] | None = None
    fast_norm: dict[str, float] | None = None

    def __post_init__(self):
        if not np.isfinite(self.loss):
            raise NumericError(f"metrics record carries non-finite loss {self.loss}")
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 1.0:
            raise ArgumentError(f"accuracy must lie in [0, 1], got {self.accuracy}")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, dict):
        return json.dumps(value, sort_keys=True)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _uncell(name: str, text: str):
    if text == "":
        return None
    if name in ("noise_sigma", "slow_norm", "fast_norm"):
        return json.loads(text)
    if name in ("epoch", "step"):
        return int(text)
    if name in ("loss", "accuracy", "lr"):
        return float(text)
    return text


def record_to_row(record: MetricsRecord) -> list[str]:
    return [_cell(getattr(record, name)) for name in CSV_COLUMNS]


def record_from_row(cells: list[str]) -> MetricsRecord:
    data = {name: _uncell(name, text) for name, text in zip(CSV_COLUMNS, cells)}
    return MetricsRecord(**data)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(backbone: Backbone, adapters, dataset, *, split: str = "val",
             run_id: str = "", epoch: int = 0, step: int = 0,
             chunk: int = 256) -> MetricsRecord:
    """Mean loss (plus accuracy for label tasks) over the whole split.

    Processed in fixed index order, in fixed-size chunks; the result does
    not depend on how the caller happened to batch things elsewhere.
    """
    if dataset.n == 0:
        raise ArgumentError(f"cannot evaluate an empty dataset for split {split!r}")
    total_loss = 0.0
    hits = 0
    for i0 in range(0, dataset.n, chunk):
        x = dataset.inputs[i0:i0 + chunk]
        y = dataset.targets[i0:i0 + chunk]
        tape = Tape()
        out = forward(backbone, adapters, x, tape)
        node = loss(tape, out, y, dataset.task_kind)
        total_loss += float(node.value[0, 0]) * x.shape[0]
        if dataset.task_kind != "regression":
            hits += int((np.argmax(out.value, axis=1) == np.asarray(y)).sum())
    mean_loss = total_loss / dataset.n
    accuracy = None if dataset.task_kind == "regression" else hits / dataset.n
    return MetricsRecord(run_id=run_id, epoch=epoch, step=step, split=split,
                         loss=mean_loss, accuracy=accuracy)


# ---------------------------------------------------------------------------
# effective rank
# ---------------------------------------------------------------------------


@dataclass
class RankReport:
    target: str
    epoch: int
    tau: float
    singular_values: list[float] = field(default_factory=list)
    effective_rank: int = 0


def effective_rank(delta: np.ndarray, tau: float = 1e-6) -> int:
    """Count of singular values above tau * sigma_1; 0 for a zero matrix."""
    if not 0.0 < tau < 1.0:
        raise ArgumentError(f"rank threshold tau must lie in (0, 1), got {tau}")
    sv = singular_values(delta)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tau * sv[0]))


def make_rank_report(target: str, delta: np.ndarray, tau: float = 1e-6,
                     epoch: int = 0) -> RankReport:
    if not 0.0 < tau < 1.0:
        raise ArgumentError(f"rank threshold tau must lie in (0, 1), got {tau}")
    sv = singular_values(delta)
    count = 0 if (sv.size == 0 or sv[0] == 0.0) else int(np.sum(sv > tau * sv[0]))
    return RankReport(target=target, epoch=epoch, tau=tau,
                      singular_values=[float(s) for s in sv],
                      effective_rank=count)


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def emit_report(records: list[MetricsRecord], fmt: str, path) -> None:
    """Write records as csv (fixed header) or jsonl, atomically."""
    if not records:
        raise ArgumentError("emit_report needs at least one record")
    if fmt == "csv":
        import io
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for record in records:
            writer.writerow(record_to_row(record))
        atomic_write_text(path, buf.getvalue())
    elif fmt == "jsonl":
        lines = []
        for record in records:
            obj = {name: getattr(record, name) for name in CSV_COLUMNS}
            lines.append(json.dumps(obj, sort_keys=True))
        atomic_write_text(path, "\n".join(lines) + "\n")
    else:
        raise ConfigError(f"unknown report format {fmt!r}; expected csv or jsonl")


def load_report(path, fmt: str) -> list[MetricsRecord]:
    path = Path(path)
    records = []
    if fmt == "csv":
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != CSV_COLUMNS:
                raise ConfigError(f"unexpected report header {header}")
            for cells in reader:
                records.append(record_from_row(cells))
    elif fmt == "jsonl":
        field_names = {f.name for f in fields(MetricsRecord)}
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    records.append(MetricsRecord(**{k: v for k, v in obj.items()
                                                    if k in field_names}))
    else:
        raise ConfigError(f"unknown report format {fmt!r}; expected csv or jsonl")
    return records
