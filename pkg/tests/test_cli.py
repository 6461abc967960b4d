import os

import numpy as np
import pytest

from lorasc.checkpoint import load_checkpoint
from lorasc.cli import main
from lorasc.evaluation import load_report


TINY = """
model.d_model = 16
model.input_dim = 8
model.output_dim = 4
data.teacher_rank = 4
data.pretrain_n = 64
data.pretrain_steps = 10
split.n_train = 48
split.n_val = 16
split.n_test = 16
cascade.rank = 2
cascade.epochs = 2
cascade.batch_size = 8
optim.lr = 0.01
run.seeds = 0
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def run_cli(*argv):
    return main(list(argv))


class TestTrain:
    def test_writes_reports_checkpoint_and_figures(self, tiny_cfg, tmp_path):
        out = tmp_path / "out"
        assert run_cli("train", "--config", str(tiny_cfg), "--out", str(out)) == 0
        assert (out / "config.txt").exists()
        assert (out / "s0" / "metrics.csv").exists()
        assert (out / "s0" / "metrics.jsonl").exists()
        assert (out / "s0" / "checkpoint.bin").exists()
        assert (out / "s0" / "figures" / "loss_curve.png").exists()
        assert not (out / ".lock").exists()

    def test_two_invocations_byte_identical_metrics(self, tiny_cfg, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_cli("train", "--config", str(tiny_cfg), "--out", str(out1),
                       "--no-figures") == 0
        assert run_cli("train", "--config", str(tiny_cfg), "--out", str(out2),
                       "--no-figures") == 0
        assert (out1 / "s0" / "metrics.csv").read_bytes() == \
            (out2 / "s0" / "metrics.csv").read_bytes()
        assert (out1 / "s0" / "metrics.jsonl").read_bytes() == \
            (out2 / "s0" / "metrics.jsonl").read_bytes()

    def test_vanilla_rows_have_no_noise_sigma(self, tiny_cfg, tmp_path):
        out = tmp_path / "v"
        assert run_cli("train", "--config", str(tiny_cfg), "--out", str(out),
                       "--ladder", "vanilla", "--no-figures") == 0
        records = load_report(out / "s0" / "metrics.csv", "csv")
        assert all(r.noise_sigma is None for r in records)

    def test_flag_overrides_file(self, tiny_cfg, tmp_path):
        out = tmp_path / "o"
        assert run_cli("train", "--config", str(tiny_cfg), "--out", str(out),
                       "--alpha", "0.8", "--no-figures") == 0
        text = (out / "config.txt").read_text()
        assert "cascade.alpha = 0.8" in text

    def test_env_seed_overrides_config(self, tiny_cfg, tmp_path, monkeypatch):
        out = tmp_path / "env"
        monkeypatch.setenv("LORASC_SEED", "42")
        assert run_cli("train", "--config", str(tiny_cfg), "--out", str(out),
                       "--no-figures") == 0
        assert (out / "s42" / "metrics.csv").exists()
        assert not (out / "s0").exists()

    def test_lock_prevents_concurrent_writers(self, tiny_cfg, tmp_path):
        out = tmp_path / "locked"
        out.mkdir()
        (out / ".lock").write_text("held")
        assert run_cli("train", "--config", str(tiny_cfg), "--out", str(out),
                       "--no-figures") == 4

    def test_resume_matches_uninterrupted(self, tiny_cfg, tmp_path):
        out_full = tmp_path / "full"
        out_half = tmp_path / "half"
        out_resume = tmp_path / "resumed"
        assert run_cli("train", "--config", str(tiny_cfg), "--out", str(out_full),
                       "--no-figures") == 0
        assert run_cli("train", "--config", str(tiny_cfg), "--out", str(out_half),
                       "--stop-after-epoch", "1", "--no-figures") == 0
        assert run_cli("train", "--config", str(tiny_cfg), "--out", str(out_resume),
                       "--resume", str(out_half / "s0" / "checkpoint.bin"),
                       "--no-figures") == 0
        full = load_checkpoint(out_full / "s0" / "checkpoint.bin")
        resumed = load_checkpoint(out_resume / "s0" / "checkpoint.bin")
        for name, arr in full.tensors.items():
            np.testing.assert_array_equal(resumed.tensors[name], arr)


class TestExitCodes:
    def test_unknown_key_is_config_error(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("cascade.turbo = 9\n")
        assert run_cli("train", "--config", str(bad)) == 2

    def test_out_of_range_alpha_is_config_error(self, tiny_cfg, tmp_path):
        assert run_cli("train", "--config", str(tiny_cfg), "--out",
                       str(tmp_path / "x"), "--alpha", "1.5") == 2

    def test_missing_checkpoint_is_io_error(self, tmp_path):
        assert run_cli("inspect", "--checkpoint", str(tmp_path / "ghost.bin")) == 4


class TestAblate:
    def test_run_dirs_and_ladder_report(self, tmp_path):
        cfg = tmp_path / "ab.cfg"
        cfg.write_text(TINY.replace("run.seeds = 0", "run.seeds = 0,1"))
        out = tmp_path / "ablate"
        assert run_cli("ablate", "--config", str(cfg), "--out", str(out),
                       "--no-figures") == 0
        dirs = [p.name for p in out.iterdir() if p.is_dir()]
        assert len([d for d in dirs if "-s" in d]) == 8  # 4 levels x 2 seeds
        assert (out / "ladder.csv").exists()
        lines = (out / "ladder.csv").read_text().splitlines()
        assert len(lines) == 1 + 8 * 2  # header + levels x seeds x (val, test)


class TestCheckpointCommands:
    @pytest.fixture
    def trained(self, tiny_cfg, tmp_path):
        out = tmp_path / "t"
        assert run_cli("train", "--config", str(tiny_cfg), "--out", str(out),
                       "--no-figures") == 0
        return out / "s0" / "checkpoint.bin"

    def test_evaluate_writes_report(self, trained, tmp_path):
        out = tmp_path / "ev"
        assert run_cli("evaluate", "--checkpoint", str(trained), "--out", str(out),
                       "--no-figures") == 0
        records = load_report(out / "eval_report.csv", "csv")
        assert {r.split for r in records} == {"train", "val", "test"}

    def test_rank_reports_targets(self, trained, tmp_path, capsys):
        out = tmp_path / "rk"
        assert run_cli("rank", "--checkpoint", str(trained), "--out", str(out),
                       "--no-figures") == 0
        text = (out / "rank.csv").read_text()
        assert "layer0.w" in text and "layer1.w" in text

    def test_rank_tau_monotonicity(self, trained, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert run_cli("rank", "--checkpoint", str(trained), "--tau", "1e-6",
                       "--out", str(out1), "--no-figures") == 0
        assert run_cli("rank", "--checkpoint", str(trained), "--tau", "0.5",
                       "--out", str(out2), "--no-figures") == 0

        def ranks(path):
            lines = path.read_text().splitlines()[1:]
            return {ln.split(",")[0]: int(ln.split(",")[3]) for ln in lines}

        loose, tight = ranks(out1 / "rank.csv"), ranks(out2 / "rank.csv")
        assert all(tight[t] <= loose[t] for t in loose)

    def test_untrained_checkpoint_has_rank_zero(self, tiny_cfg, tmp_path):
        out = tmp_path / "u"
        # lr 0 means nothing moves and no noise accumulates scale
        assert run_cli("train", "--config", str(tiny_cfg), "--out", str(out),
                       "--lr", "0.0", "--no-figures") == 0
        rank_out = tmp_path / "ur"
        assert run_cli("rank",
                       "--checkpoint", str(out / "s0" / "checkpoint.bin"),
                       "--out", str(rank_out), "--no-figures") == 0
        lines = (rank_out / "rank.csv").read_text().splitlines()[1:]
        assert all(int(ln.split(",")[3]) == 0 for ln in lines)

    def test_inspect_prints_header(self, trained, capsys):
        assert run_cli("inspect", "--checkpoint", str(trained)) == 0
        out = capsys.readouterr().out
        assert "version:" in out and "backbone.layer0.w" in out
