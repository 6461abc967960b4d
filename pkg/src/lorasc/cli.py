"""Command-line interface.

Subcommands: train, ablate, evaluate, rank, inspect. Each run directory
receives delimited reports, the resolved config snapshot, a final
checkpoint, and rendered figures. Exit codes: 0 success, 2 config error,
3 training/numeric error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import checkpoint as ckpt_mod
from . import figures
from .cascade import CascadeConfig, run
from .config import (RunConfig, build_task, config_digest, parse_config,
                     serialize_config)
from .errors import (ArgumentError, CheckpointError, ConfigError, DataError,
                     LorascError, NumericError, ShapeError, TrainingError)
from .evaluation import emit_report, evaluate, make_rank_report
from .data import corrupt
from .ladder import ablation_ladder, emit_ladder_report
from .model import ModelConfig, build, pretrain_backbone
from .numkit import set_default_dtype

SEED_ENV = "LORASC_SEED"

_OVERRIDE_FLAGS = {
    "alpha": "cascade.alpha",
    "lam": "cascade.lambda",
    "rank": "cascade.rank",
    "steps_per_expert": "cascade.steps_per_expert",
    "ladder": "cascade.ladder",
    "baseline": "cascade.baseline",
    "lr": "optim.lr",
    "lr_plus_ratio": "optim.b_lr_ratio",
    "out": "run.out",
    "precision": "run.precision",
    "epochs": "cascade.epochs",
}


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key-value config file")
    p.add_argument("--seed", type=int, help="single seed override")
    p.add_argument("--alpha", type=float, help="slow retention in [0,1]")
    p.add_argument("--lambda", dest="lam", type=float, help="noise intensity >= 0")
    p.add_argument("--rank", type=int, help="adapter rank")
    p.add_argument("--steps-per-expert", dest="steps_per_expert", type=int)
    p.add_argument("--ladder", choices=("vanilla", "cascade", "slow", "full"))
    p.add_argument("--baseline", choices=("none", "cola"))
    p.add_argument("--lr", type=float, help="base learning rate")
    p.add_argument("--lr-plus-ratio", dest="lr_plus_ratio", type=float,
                   help="B-matrix learning-rate ratio (16 for the + variant)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--discard-noise", action="store_true", default=None)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--precision", choices=("f32", "f64"))
    p.add_argument("--no-figures", action="store_true")


def _load_config(args) -> RunConfig:
    overrides = {}
    for attr, key in _OVERRIDE_FLAGS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "discard_noise", None):
        overrides["cascade.discard_noise"] = True
    if getattr(args, "seed", None) is not None:
        overrides["run.seeds"] = str(args.seed)
    cfg = parse_config(args.config, overrides)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            cfg = replace(cfg, seeds=(int(env_seed),))
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from exc
    return cfg


def _prepare_out(cfg: RunConfig):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise FileExistsError(
            f"run directory {out} is locked by another writer ({lock} exists)")
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    return out, lock


def _prepared_backbone(cfg: RunConfig, seed: int):
    model_cfg = replace(cfg.model, seed=seed)
    backbone = build(model_cfg)
    task = build_task(model_cfg, cfg.data, cfg.split, seed)
    if task.pretrain is not None and cfg.data.pretrain_steps > 0:
        pretrain_backbone(backbone, task.pretrain, cfg.data.pretrain_steps,
                          lr=cfg.data.pretrain_lr)
    return backbone, task


def _write_run_artifacts(run_dir: Path, report, cfg: RunConfig, *,
                         render: bool) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    emit_report(report.records, "csv", run_dir / "metrics.csv")
    emit_report(report.records, "jsonl", run_dir / "metrics.jsonl")
    if report.state is not None:
        ckpt_mod.save_checkpoint(report.state, run_dir / "checkpoint.bin",
                                 config_text=serialize_config(cfg),
                                 config_digest=config_digest(cfg))
    if render:
        figures.save_loss_curves(report.records, run_dir / "figures" / "loss_curve.png")


def cmd_train(args) -> int:
    cfg = _load_config(args)
    set_default_dtype(cfg.precision)
    out, lock = _prepare_out(cfg)
    try:
        (out / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")
        for seed in cfg.seeds:
            seed_cfg = cfg.for_seed(seed)
            run_dir = out / f"s{seed}"
            if args.resume:
                ckpt = ckpt_mod.load_checkpoint(args.resume)
                state = ckpt_mod.restore_run_state(ckpt, seed_cfg.cascade,
                                                   seed_cfg.model)
                _, task = None, build_task(seed_cfg.model, cfg.data, cfg.split, seed)
                report = run(seed_cfg.cascade, state.backbone, task,
                             resume_state=state,
                             stop_after_epoch=args.stop_after_epoch)
            else:
                backbone, task = _prepared_backbone(cfg, seed)
                hook = None
                if cfg.checkpoint_every > 0:
                    def hook(state, _dir=run_dir, _cfg=cfg, _every=cfg.checkpoint_every):
                        if state.epoch % _every == 0:
                            _dir.mkdir(parents=True, exist_ok=True)
                            ckpt_mod.save_checkpoint(
                                state, _dir / f"checkpoint-epoch{state.epoch}.bin",
                                config_text=serialize_config(_cfg),
                                config_digest=config_digest(_cfg))
                report = run(seed_cfg.cascade, backbone, task, epoch_hook=hook,
                             stop_after_epoch=args.stop_after_epoch)
            _write_run_artifacts(run_dir, report, cfg, render=not args.no_figures)
            print(f"seed {seed}: wrote {run_dir}/metrics.csv "
                  f"({len(report.records)} records)")
        return 0
    finally:
        lock.unlink(missing_ok=True)


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    set_default_dtype(cfg.precision)
    out, lock = _prepare_out(cfg)
    try:
        (out / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")
        backbones, tasks = {}, {}

        def backbone_factory(seed):
            if seed not in backbones:
                backbones[seed], tasks[seed] = _prepared_backbone(cfg, seed)
            return backbones[seed].copy()

        def task_factory(seed):
            backbone_factory(seed)
            return tasks[seed]

        rows, reports = ablation_ladder(cfg.cascade, list(cfg.seeds),
                                        backbone_factory, task_factory,
                                        corruptions=cfg.data.corruptions)
        for (level, seed), report in reports.items():
            seed_cfg = replace(cfg.for_seed(seed),
                               cascade=replace(cfg.cascade, ladder=level, seed=seed))
            _write_run_artifacts(out / f"{level}-s{seed}", report, seed_cfg,
                                 render=not args.no_figures)
        emit_ladder_report(rows, out / "ladder.csv")
        if not args.no_figures:
            figures.save_ladder_chart(rows, out / "figures" / "ladder.png")
        print(f"wrote {out}/ladder.csv ({len(rows)} rows)")
        return 0
    finally:
        lock.unlink(missing_ok=True)


def _config_from_checkpoint(ckpt) -> RunConfig:
    import io as _io
    import tempfile
    with tempfile.NamedTemporaryFile("w", suffix=".cfg", delete=False) as fh:
        fh.write(ckpt.config_text)
        tmp = fh.name
    try:
        return parse_config(tmp)
    finally:
        os.unlink(tmp)


def cmd_evaluate(args) -> int:
    ckpt = ckpt_mod.load_checkpoint(args.checkpoint)
    cfg = _config_from_checkpoint(ckpt)
    set_default_dtype(cfg.precision)
    seed = ckpt.seed
    seed_cfg = cfg.for_seed(seed)
    state = ckpt_mod.restore_run_state(ckpt, seed_cfg.cascade, seed_cfg.model)
    task = build_task(seed_cfg.model, cfg.data, cfg.split, seed)
    records = []
    splits = [("train", task.train), ("val", task.val), ("test", task.test)]
    for spec in cfg.data.corruptions:
        if task.test is not None:
            splits.append((spec.label, corrupt(task.test, replace(spec, seed=seed))))
    for name, split in splits:
        if split is None or split.n == 0:
            continue
        records.append(evaluate(state.backbone, None, split, split=name,
                                run_id=f"eval-s{seed}", epoch=ckpt.epoch,
                                step=ckpt.global_step))
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(records, "csv", out / "eval_report.csv")
    if not args.no_figures:
        figures.save_split_bars(records, out / "figures" / "eval_splits.png")
    for record in records:
        acc = "" if record.accuracy is None else f" acc={record.accuracy:.4f}"
        print(f"{record.split}: loss={record.loss:.6f}{acc}")
    return 0


def cmd_rank(args) -> int:
    ckpt = ckpt_mod.load_checkpoint(args.checkpoint)
    cfg = _config_from_checkpoint(ckpt)
    set_default_dtype(cfg.precision)
    targets = [k[len("ledger.delta."):] for k in ckpt.tensors
               if k.startswith("ledger.delta.")]
    if not targets:
        raise CheckpointError(
            "checkpoint carries no merge ledger; rank diagnostics need one")
    reports = []
    for target in targets:
        current = ckpt.require(f"backbone.{target}")
        initial = ckpt.require(f"initial.{target}")
        noise = ckpt.require(f"ledger.noise.{target}")
        cumulative = current - initial - noise
        reports.append(make_rank_report(target, cumulative, tau=args.tau,
                                        epoch=ckpt.epoch))
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["target,epoch,tau,effective_rank,singular_values"]
    for r in reports:
        sv = ";".join(repr(v) for v in r.singular_values)
        lines.append(f"{r.target},{r.epoch},{r.tau!r},{r.effective_rank},{sv}")
    (out / "rank.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if not args.no_figures:
        figures.save_rank_spectrum(reports, out / "figures" / "rank_spectrum.png")
    for r in reports:
        print(f"{r.target}: effective rank {r.effective_rank} at tau={r.tau:g}")
    return 0


def cmd_inspect(args) -> int:
    ckpt = ckpt_mod.load_checkpoint(args.checkpoint)
    print(f"version:       {ckpt.version}")
    print(f"config digest: {ckpt.config_digest}")
    print(f"seed:          {ckpt.seed}")
    print(f"epoch:         {ckpt.epoch}")
    print(f"global step:   {ckpt.global_step}")
    print(f"tensors:       {len(ckpt.tensors)}")
    for name, arr in ckpt.tensors.items():
        print(f"  {name:32s} {str(arr.dtype):8s} {arr.shape}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lorasc",
        description="Cascaded low-rank adapter fine-tuning laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the configured schedule per seed")
    _add_common_flags(p_train)
    p_train.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")
    p_train.add_argument("--stop-after-epoch", type=int, default=None,
                         help="halt after this many cascade periods")
    p_train.set_defaults(fn=cmd_train)

    p_ablate = sub.add_parser("ablate", help="run the 4-level ablation ladder")
    _add_common_flags(p_ablate)
    p_ablate.set_defaults(fn=cmd_ablate)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint on all splits")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--out", metavar="DIR")
    p_eval.add_argument("--no-figures", action="store_true")
    p_eval.set_defaults(fn=cmd_evaluate)

    p_rank = sub.add_parser("rank", help="effective rank of cumulative updates")
    p_rank.add_argument("--checkpoint", required=True)
    p_rank.add_argument("--tau", type=float, default=1e-6)
    p_rank.add_argument("--out", metavar="DIR")
    p_rank.add_argument("--no-figures", action="store_true")
    p_rank.set_defaults(fn=cmd_rank)

    p_inspect = sub.add_parser("inspect", help="print a checkpoint's header")
    p_inspect.add_argument("--checkpoint", required=True)
    p_inspect.set_defaults(fn=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, NumericError, ShapeError) as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 3
    except (CheckpointError, DataError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except LorascError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
