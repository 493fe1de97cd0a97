"""Architecture conformance, shape contracts, and gradient coverage."""

import numpy as np
import pytest

from bcenhance import model
from bcenhance.errors import ConfigError, DimensionError
from bcenhance.nn import tensor as ops

# Frozen layout fixture: (kernel, stride, channels) per layer.
GENERATOR_TABLE = [
    ("1x15", "1x1", "128"),
    ("1x5", "1x2", "256"),
    ("1x5", "1x2", "512"),
    ("1x3", "1x1", "1024"),
    ("1x3", "1x1", "512"),
    ("1x5", "1x1", "1024"),
    ("1x5", "1x1", "512"),
    ("1x15", "1x1", "24"),
]
DISCRIMINATOR_TABLE = [
    ("3x3", "1x2", "128"),
    ("3x3", "2x2", "256"),
    ("3x3", "2x2", "512"),
    ("6x3", "1x2", "1024"),
]


class TestGeneratorStructure:
    def test_layout_matches_fixture(self):
        g = model.build_generator(0)
        assert model.generator_layout(g) == GENERATOR_TABLE

    def test_residual_blocks_share_structure(self):
        g = model.build_generator(0)
        assert len(g.blocks) == 6
        shapes = {(b.conv1.weight.data.shape, b.conv2.weight.data.shape) for b in g.blocks}
        assert shapes == {((1024, 512, 3), (512, 1024, 3))}

    def test_encoder_second_block_weight_shapes(self):
        g = model.build_generator(0)
        assert g.down2.linear.weight.data.shape == (512, 256, 5)
        assert g.down2.gate.weight.data.shape == (512, 256, 5)

    def test_output_conv_channels(self):
        g = model.build_generator(0)
        assert g.out_conv.weight.data.shape[0] == 24

    def test_input_conv_has_no_norm(self):
        g = model.build_generator(0)
        assert g.in_conv.norm_linear is None and g.in_conv.norm_gate is None
        assert g.down1.norm_linear is not None

    def test_build_is_deterministic(self):
        g1, g2 = model.build_generator(5), model.build_generator(5)
        for (n1, p1), (n2, p2) in zip(g1.named_parameters(), g2.named_parameters()):
            assert n1 == n2
            np.testing.assert_array_equal(p1.data, p2.data)

    def test_different_seeds_differ(self):
        g1, g2 = model.build_generator(0), model.build_generator(1)
        same = [
            np.array_equal(p1.data, p2.data)
            for (_, p1), (_, p2) in zip(g1.named_parameters(), g2.named_parameters())
            if p1.data.std() > 0
        ]
        assert not any(same)


class TestGeneratorForward:
    @pytest.mark.parametrize("t", [4, 64, 128, 512])
    def test_shape_roundtrip(self, t):
        g = model.build_generator(2)
        x = ops.Tensor(np.random.default_rng(t).standard_normal((24, t)).astype(np.float32))
        out = g(x)
        assert out.data.shape == (24, t)
        assert np.all(np.isfinite(out.data))

    def test_rejects_indivisible_frames(self):
        g = model.build_generator(2)
        with pytest.raises(DimensionError):
            g(ops.Tensor(np.zeros((24, 30), dtype=np.float32)))

    def test_rejects_wrong_feature_dim(self):
        g = model.build_generator(2)
        with pytest.raises(DimensionError):
            g(ops.Tensor(np.zeros((23, 32), dtype=np.float32)))

    def test_zeroed_converter_is_identity_on_its_input(self):
        g = model.build_generator(3, dtype=np.float64)
        for block in g.blocks:
            for _, p in block.named_parameters():
                p.data[...] = 0.0
        x = ops.Tensor(np.random.default_rng(9).standard_normal((24, 16)))
        h = g.in_conv(x)
        h = g.down1(h)
        h = g.down2(h)
        before = h.data.copy()
        for block in g.blocks:
            h = block(h)
        np.testing.assert_allclose(h.data, before, atol=1e-12)

    def test_gradient_reaches_every_parameter(self):
        g = model.build_generator(4, dtype=np.float64)
        x = ops.Tensor(np.random.default_rng(10).standard_normal((24, 16)), requires_grad=True)
        loss = ops.mean(ops.square(g(x)))
        ops.backward(loss)
        for name, p in g.named_parameters():
            assert p.grad is not None, name
            assert np.linalg.norm(p.grad) > 0.0, name
        assert np.linalg.norm(x.grad) > 0.0


class TestDiscriminator:
    def test_layout_matches_fixture(self):
        for kind in (model.CLASSIFICATION, model.DEFECT):
            d = model.build_discriminator(kind, 0)
            assert model.discriminator_layout(d) == DISCRIMINATOR_TABLE

    def test_classification_emits_single_score(self):
        d = model.build_discriminator(model.CLASSIFICATION, 1)
        out = d(ops.Tensor(np.random.default_rng(0).standard_normal((24, 64)).astype(np.float32)))
        assert out.logits.data.shape == (1,)
        assert 0.0 < out.score.item() < 1.0

    def test_defect_emits_patch_grid(self):
        d = model.build_discriminator(model.DEFECT, 1)
        out = d(ops.Tensor(np.random.default_rng(0).standard_normal((24, 128)).astype(np.float32)))
        assert out.logits.data.shape[0] >= 4
        assert out.logits.data.shape[0] == 6 * 8  # 24 rows -> 6, 128 frames -> 8
        assert np.all((out.scores.data > 0) & (out.scores.data < 1))

    def test_defect_score_is_mean_of_patch_sigmoids(self):
        d = model.build_discriminator(model.DEFECT, 2)
        out = d(ops.Tensor(np.random.default_rng(1).standard_normal((24, 32)).astype(np.float32)))
        np.testing.assert_allclose(out.score.item(), out.scores.data.mean(), atol=1e-12)

    def test_zero_weights_score_half(self):
        for kind in (model.CLASSIFICATION, model.DEFECT):
            d = model.build_discriminator(kind, 3, dtype=np.float64)
            for _, p in d.named_parameters():
                p.data[...] = 0.0
            out = d(ops.Tensor(np.random.default_rng(2).standard_normal((24, 32))))
            np.testing.assert_allclose(out.score.item(), 0.5, atol=1e-12)

    def test_scores_in_unit_interval(self):
        rng = np.random.default_rng(4)
        for kind in (model.CLASSIFICATION, model.DEFECT):
            d = model.build_discriminator(kind, 5)
            for _ in range(3):
                out = d(ops.Tensor((10.0 * rng.standard_normal((24, 48))).astype(np.float32)))
                assert 0.0 < out.score.item() < 1.0

    def test_rejects_short_input_naming_minimum(self):
        d = model.build_discriminator(model.CLASSIFICATION, 0)
        with pytest.raises(DimensionError, match=str(model.MIN_DISC_FRAMES)):
            d(ops.Tensor(np.zeros((24, 8), dtype=np.float32)))

    def test_seed_isolation_between_kinds(self):
        dc = model.build_discriminator(model.CLASSIFICATION, 10)
        dd = model.build_discriminator(model.DEFECT, 11)
        pc = {name: p for name, p in dc.named_parameters()}
        pd = {name: p for name, p in dd.named_parameters()}
        shared = [n for n in pc.keys() & pd.keys() if pc[n].data.std() > 0 and np.array_equal(pc[n].data, pd[n].data)]
        assert shared == []

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            model.build_discriminator("frequency", 0)

    def test_defect_with_fc_head_matches_classification_shape(self):
        d = model.build_discriminator(model.DEFECT, 6, patch_head=False)
        out = d(ops.Tensor(np.random.default_rng(3).standard_normal((24, 32)).astype(np.float32)))
        assert out.logits.data.shape == (1,)

    def test_gradient_reaches_every_parameter(self):
        for kind in (model.CLASSIFICATION, model.DEFECT):
            d = model.build_discriminator(kind, 7, dtype=np.float64)
            x = ops.Tensor(np.random.default_rng(11).standard_normal((24, 32)), requires_grad=True)
            out = d(x)
            ops.backward(ops.mean(ops.square(ops.sub(out.scores, 1.0))))
            for name, p in d.named_parameters():
                assert p.grad is not None and np.linalg.norm(p.grad) > 0.0, f"{kind}:{name}"
            assert np.linalg.norm(x.grad) > 0.0
