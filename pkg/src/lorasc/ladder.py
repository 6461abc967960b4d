"""The four-level ablation ladder and its consolidated report.

Levels share seeds and data: for each seed, one backbone is built (and
pretrained) once, then copied into a vanilla run, a plain cascade, a
cascade with slow averaging, and the full schedule with noise. Rows carry
per-seed results plus mean/std columns across seeds for each
(level, split) group.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .cascade import CascadeConfig, RunReport, TaskBundle, run
from .errors import ArgumentError
from .evaluation import atomic_write_text, evaluate
from .model import Backbone

LEVELS = ("vanilla", "cascade", "slow", "full")

LADDER_COLUMNS = ("level", "split", "seed", "loss", "accuracy",
                  "loss_mean", "loss_std", "acc_mean", "acc_std")


@dataclass
class LadderRow:
    level: str
    split: str
    seed: int
    loss: float
    accuracy: float | None = None
    loss_mean: float | None = None
    loss_std: float | None = None
    acc_mean: float | None = None
    acc_std: float | None = None


def level_config(base: CascadeConfig, level: str, seed: int) -> CascadeConfig:
    if level not in LEVELS:
        raise ArgumentError(f"unknown ladder level {level!r}; expected {LEVELS}")
    return replace(base, ladder=level, baseline="none", seed=seed)


def ablation_ladder(base: CascadeConfig, seeds: list[int], backbone_factory,
                    task_factory, corruptions=()) -> tuple[list[LadderRow], dict]:
    """Run all four levels per seed; returns rows plus the reports by (level, seed).

    ``backbone_factory(seed)`` must hand back an independent (pre)trained
    backbone and ``task_factory(seed)`` the matching splits.
    """
    if not seeds:
        raise ArgumentError("ablation ladder needs at least one seed")
    rows: list[LadderRow] = []
    reports: dict[tuple[str, int], RunReport] = {}
    for seed in seeds:
        backbone: Backbone = backbone_factory(seed)
        task: TaskBundle = task_factory(seed)
        for level in LEVELS:
            report = run(level_config(base, level, seed), backbone, task)
            reports[(level, seed)] = report
            splits = [("val", task.val), ("test", task.test)]
            for spec in corruptions:
                from .data import corrupt
                if task.test is not None:
                    splits.append((spec.label, corrupt(task.test, spec)))
            for split_name, split in splits:
                if split is None or split.n == 0:
                    continue
                record = evaluate(report.backbone, None, split, split=split_name,
                                  run_id=report.run_id, epoch=base.epochs)
                rows.append(LadderRow(level=level, split=split_name, seed=seed,
                                      loss=record.loss, accuracy=record.accuracy))
    _fill_aggregates(rows)
    return rows, reports


def _fill_aggregates(rows: list[LadderRow]) -> None:
    groups: dict[tuple[str, str], list[LadderRow]] = {}
    for row in rows:
        groups.setdefault((row.level, row.split), []).append(row)
    for group in groups.values():
        losses = np.array([r.loss for r in group], dtype=np.float64)
        accs = [r.accuracy for r in group if r.accuracy is not None]
        for r in group:
            r.loss_mean = float(losses.mean())
            r.loss_std = float(losses.std())
            if accs:
                r.acc_mean = float(np.mean(accs))
                r.acc_std = float(np.std(accs))


def emit_ladder_report(rows: list[LadderRow], path) -> None:
    if not rows:
        raise ArgumentError("ladder report needs at least one row")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LADDER_COLUMNS)
    for row in rows:
        writer.writerow(["" if getattr(row, c) is None else
                         (repr(getattr(row, c)) if isinstance(getattr(row, c), float)
                          else str(getattr(row, c)))
                         for c in LADDER_COLUMNS])
    atomic_write_text(path, buf.getvalue())


def load_ladder_report(path) -> list[LadderRow]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != LADDER_COLUMNS:
            raise ArgumentError(f"unexpected ladder header {header}")
        for cells in reader:
            data = {}
            for name, text in zip(LADDER_COLUMNS, cells):
                if text == "":
                    data[name] = None
                elif name in ("level", "split"):
                    data[name] = text
                elif name == "seed":
                    data[name] = int(text)
                else:
                    data[name] = float(text)
            rows.append(LadderRow(**data))
    return rows
