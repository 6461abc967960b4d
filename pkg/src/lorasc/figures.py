"""Figure rendering for the CLI report paths.

Reports stay plot-ready data; these helpers turn them into PNGs written
next to the delimited files. Everything renders through the Agg backend so
headless runs work.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .evaluation import MetricsRecord  # noqa: E402


def _finish(fig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def save_loss_curves(records: list[MetricsRecord], path) -> None:
    """Per-step training loss with per-epoch eval losses overlaid."""
    fig, ax = plt.subplots(figsize=(7, 4))
    train = [(r.step, r.loss) for r in records if r.split == "train"]
    if train:
        steps, losses = zip(*train)
        ax.plot(steps, losses, lw=0.8, alpha=0.7, label="train (per step)")
    for split, marker in (("val", "o"), ("test", "s")):
        pts = [(r.step, r.loss) for r in records if r.split == split]
        if pts:
            steps, losses = zip(*pts)
            ax.plot(steps, losses, marker=marker, lw=1.5, label=split)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title("training and evaluation loss")
    _finish(fig, path)


def save_ladder_chart(rows, path) -> None:
    """Grouped bars of mean loss per ladder level and split."""
    fig, ax = plt.subplots(figsize=(7, 4))
    levels = []
    for row in rows:
        if row.level not in levels:
            levels.append(row.level)
    splits = []
    for row in rows:
        if row.split not in splits:
            splits.append(row.split)
    width = 0.8 / max(len(splits), 1)
    for si, split in enumerate(splits):
        means, errs = [], []
        for level in levels:
            group = [r for r in rows if r.level == level and r.split == split]
            means.append(group[0].loss_mean if group else float("nan"))
            errs.append(group[0].loss_std if group and group[0].loss_std is not None else 0.0)
        xs = [i + si * width for i in range(len(levels))]
        ax.bar(xs, means, width=width, yerr=errs, capsize=3, label=split)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(levels))])
    ax.set_xticklabels(levels)
    ax.set_ylabel("loss (mean over seeds)")
    ax.set_title("ablation ladder")
    ax.legend()
    _finish(fig, path)


def save_rank_spectrum(reports, path) -> None:
    """Singular-value spectra of the cumulative merged updates per target."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for report in reports:
        sv = report.singular_values
        if sv:
            ax.semilogy(range(1, len(sv) + 1), sv, marker=".",
                        label=f"{report.target} (rank {report.effective_rank})")
    ax.set_xlabel("singular value index")
    ax.set_ylabel("singular value")
    ax.set_title("cumulative update spectrum")
    if reports:
        ax.legend(fontsize=8)
    _finish(fig, path)


def save_split_bars(records: list[MetricsRecord], path) -> None:
    """One bar per evaluated split."""
    fig, ax = plt.subplots(figsize=(7, 4))
    splits = [r.split for r in records]
    ax.bar(range(len(records)), [r.loss for r in records])
    ax.set_xticks(range(len(records)))
    ax.set_xticklabels(splits, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("loss")
    ax.set_title("evaluation by split")
    _finish(fig, path)
