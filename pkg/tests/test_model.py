import numpy as np
import pytest

from lorasc.adapter import delta, init_pair, merge_into
from lorasc.data import gen_sequence_task, gen_teacher_student
from lorasc.errors import ConfigError, ShapeError
from lorasc.model import (ModelConfig, build, default_targets, forward, loss,
                          pretrain_backbone)
from lorasc.numkit import RngState, Tape, precision


def adapters_for(backbone, seed=0, rank=2, nonzero=True):
    rng = RngState(seed, "adapter-init")
    pairs = {}
    for name in backbone.target_names:
        d, k = backbone.params[name].shape
        pair = init_pair(name, d, k, rank, 1.0, rng)
        if nonzero:
            pair.b[:] = RngState(seed + 91).normal(pair.b.shape, 0.2).astype(pair.b.dtype)
        pairs[name] = pair
    return pairs


class TestConfigAndBuild:
    def test_bad_mode_named(self):
        with pytest.raises(ConfigError, match="model.mode"):
            ModelConfig(mode="rnn")

    def test_heads_divisibility_checked(self):
        with pytest.raises(ConfigError, match="d_model"):
            ModelConfig(mode="transformer", d_model=30, heads=4)

    def test_nonpositive_field_named(self):
        with pytest.raises(ConfigError, match="model.depth"):
            ModelConfig(depth=0)

    def test_build_deterministic(self):
        cfg = ModelConfig(seed=12)
        p1, p2 = build(cfg).params, build(cfg).params
        assert list(p1) == list(p2)
        for name in p1:
            np.testing.assert_array_equal(p1[name], p2[name])

    def test_transformer_targets_q_and_v_per_layer(self):
        cfg = ModelConfig(mode="transformer", depth=2, d_model=32, heads=4,
                          input_dim=11, output_dim=5)
        targets = default_targets(cfg)
        assert targets == ["layer0.attn.wq", "layer0.attn.wv",
                           "layer1.attn.wq", "layer1.attn.wv"]

    def test_mlp_targets_one_per_layer(self):
        assert default_targets(ModelConfig(depth=3)) == [
            "layer0.w", "layer1.w", "layer2.w"]

    def test_target_shapes_resolve(self):
        backbone = build(ModelConfig(seed=0))
        shapes = backbone.target_shapes()
        assert shapes["layer0.w"] == (32, 16)
        with pytest.raises(ShapeError):
            backbone.target_shapes(["missing"])


class TestForward:
    def test_zero_b_adapters_are_identity(self):
        backbone = build(ModelConfig(seed=5))
        x = gen_teacher_student(1, 6, 16, 8, 4).inputs
        pairs = adapters_for(backbone, nonzero=False)
        t1, t2 = Tape(), Tape()
        plain = forward(backbone, None, x, t1).value
        adapted = forward(backbone, pairs, x, t2).value
        np.testing.assert_array_equal(plain, adapted)

    def test_adapter_equals_premerged(self):
        backbone = build(ModelConfig(seed=6))
        x = gen_teacher_student(2, 5, 16, 8, 4).inputs
        pairs = adapters_for(backbone, seed=3)
        merged = backbone.copy()
        for pair in pairs.values():
            merge_into(merged, pair)
        with_adapter = forward(backbone, pairs, x, Tape()).value
        with_merged = forward(merged, None, x, Tape()).value
        np.testing.assert_allclose(with_adapter, with_merged, atol=1e-5)

    def test_adapter_equals_premerged_transformer(self):
        cfg = ModelConfig(mode="transformer", depth=2, d_model=16, heads=4,
                          input_dim=9, output_dim=9, seed=6)
        backbone = build(cfg)
        tokens = gen_sequence_task(2, 4, 6, 9).inputs
        pairs = adapters_for(backbone, seed=3)
        merged = backbone.copy()
        for pair in pairs.values():
            merge_into(merged, pair)
        with_adapter = forward(backbone, pairs, tokens, Tape()).value
        with_merged = forward(merged, None, tokens, Tape()).value
        np.testing.assert_allclose(with_adapter, with_merged, atol=1e-5)

    def test_batch_rows_independent(self):
        backbone = build(ModelConfig(seed=7))
        x = gen_teacher_student(3, 4, 16, 8, 4).inputs
        full = forward(backbone, None, x, Tape()).value
        row = forward(backbone, None, x[1:2], Tape()).value
        np.testing.assert_allclose(row, full[1:2], atol=1e-6)

    def test_batch_rows_independent_transformer(self):
        cfg = ModelConfig(mode="transformer", depth=1, d_model=16, heads=2,
                          input_dim=7, output_dim=7, seed=8)
        backbone = build(cfg)
        tokens = gen_sequence_task(4, 4, 5, 7).inputs
        full = forward(backbone, None, tokens, Tape()).value
        row = forward(backbone, None, tokens[2:3], Tape()).value
        np.testing.assert_allclose(row, full[2:3], atol=1e-6)

    def test_adapter_shape_mismatch_names_target(self):
        backbone = build(ModelConfig(seed=1))
        bad = init_pair("layer1.w", 8, 8, 2, 1.0, RngState(0, "adapter-init"))
        with pytest.raises(ShapeError, match="layer1.w"):
            forward(backbone, {"layer1.w": bad}, np.zeros((2, 16), np.float32), Tape())

    def test_unknown_adapter_target_rejected(self):
        backbone = build(ModelConfig(seed=1))
        pair = init_pair("ghost", 4, 4, 1, 1.0, RngState(0, "adapter-init"))
        with pytest.raises(ShapeError, match="ghost"):
            forward(backbone, {"ghost": pair}, np.zeros((2, 16), np.float32), Tape())

    def test_bad_batch_shape_rejected(self):
        backbone = build(ModelConfig(seed=1))
        with pytest.raises(ShapeError):
            forward(backbone, None, np.zeros((2, 5), np.float32), Tape())


class TestLoss:
    def test_regression_zero_on_match(self):
        t = Tape()
        out = t.constant(np.array([[1.0, -2.0]]))
        assert float(loss(t, out, np.array([[1.0, -2.0]]), "regression").value[0, 0]) == 0.0

    def test_uniform_logits_cross_entropy(self):
        t = Tape()
        out = t.constant(np.zeros((3, 5)))
        node = loss(t, out, np.array([0, 2, 4]), "classification")
        assert float(node.value[0, 0]) == pytest.approx(np.log(5.0), rel=1e-6)

    def test_random_case_matches_hand_oracle(self):
        with precision("f64"):
            rng = RngState(9)
            pred = rng.normal((4, 3))
            target = rng.normal((4, 3))
            t = Tape()
            node = loss(t, t.constant(pred), target, "regression")
            hand = sum((float(pred[i, j]) - float(target[i, j])) ** 2
                       for i in range(4) for j in range(3)) / 12.0
            assert abs(float(node.value[0, 0]) - hand) < 1e-10

    def test_unknown_kind_rejected(self):
        t = Tape()
        with pytest.raises(ConfigError):
            loss(t, t.constant(np.zeros((1, 1))), np.zeros((1, 1)), "ranking")


class TestPretrain:
    def test_zero_steps_is_noop(self):
        backbone = build(ModelConfig(seed=10))
        before = backbone.checksum()
        pretrain_backbone(backbone, gen_teacher_student(0, 32, 16, 8, 4), steps=0)
        assert backbone.checksum() == before

    def test_loss_drops(self):
        cfg = ModelConfig(seed=11, d_model=16, input_dim=8, output_dim=4)
        backbone = build(cfg)
        data = gen_teacher_student(5, 256, 8, 4, 4)
        t = Tape()
        initial = float(loss(t, forward(backbone, None, data.inputs, t),
                             data.targets, "regression").value[0, 0])
        pretrain_backbone(backbone, data, steps=300, lr=5e-3)
        t = Tape()
        final = float(loss(t, forward(backbone, None, data.inputs, t),
                           data.targets, "regression").value[0, 0])
        assert final < initial

    def test_pretrained_transfers_to_related_task(self):
        # narrow task = broad teacher + small residual: the pretrained
        # backbone must beat a random one zero-shot
        from lorasc.data import make_teacher
        cfg = ModelConfig(seed=13, d_model=16, input_dim=8, output_dim=4)
        broad = make_teacher(21, 8, 4, 4)
        narrow = broad + 0.2 * make_teacher(22, 8, 4, 2)
        broad_data = gen_teacher_student(23, 512, 8, 4, 4, teacher=broad)
        narrow_data = gen_teacher_student(24, 256, 8, 4, 4, teacher=narrow)
        pretrained = pretrain_backbone(build(cfg), broad_data, steps=500, lr=5e-3)
        random_init = build(ModelConfig(seed=14, d_model=16, input_dim=8, output_dim=4))

        def zero_shot(backbone):
            t = Tape()
            node = loss(t, forward(backbone, None, narrow_data.inputs, t),
                        narrow_data.targets, "regression")
            return float(node.value[0, 0])

        assert zero_shot(pretrained) < zero_shot(random_init)

    def test_head_mismatch_rejected(self):
        backbone = build(ModelConfig(seed=1, output_dim=8))
        wrong = gen_teacher_student(0, 16, 16, 3, 2)
        with pytest.raises(ConfigError):
            pretrain_backbone(backbone, wrong, steps=1)

    def test_sequence_pretrain_runs(self):
        cfg = ModelConfig(mode="transformer", depth=1, d_model=16, heads=2,
                          input_dim=6, output_dim=6, seed=15)
        backbone = build(cfg)
        data = gen_sequence_task(3, 64, 5, 6)
        pretrain_backbone(backbone, data, steps=20, lr=1e-3, batch_size=8)
