import numpy as np
import pytest
import torch

import oracles
from o2sr.errors import ConfigurationError, ShapeError
from o2sr.fusion import FUSION_MODES
from o2sr.imaging import Image
from o2sr.model import (
    ENCODER_VARIANTS,
    ModelConfig,
    build_model,
    mirror_pad,
    parameter_count,
    pixel_shuffle,
    pixel_unshuffle,
    relative_position_index,
    shape_chart,
    super_resolve,
    window_attention,
)

T = torch.float64
TINY = ModelConfig(scale=4, channels=16, n_blocks=2, n_heads=2, window_size=4)


def _t(x):
    return torch.as_tensor(x, dtype=T)


class TestPixelShuffle:
    def test_identity(self):
        m = torch.randn(3, 4, 5)
        assert torch.equal(pixel_shuffle(m, 1), m)

    def test_four_channels_enumerated(self):
        m = torch.arange(16.0).reshape(4, 2, 2)
        out = pixel_shuffle(m, 2)
        assert out.shape == (1, 4, 4)
        for y in range(4):
            for x in range(4):
                assert out[0, y, x] == m[(y % 2) * 2 + x % 2, y // 2, x // 2]

    @pytest.mark.parametrize("d", [2, 3])
    def test_loop_reference_and_torch(self, d):
        m = np.random.default_rng(d).normal(size=(2 * d * d, 3, 4))
        out = pixel_shuffle(_t(m), d)
        np.testing.assert_array_equal(out.numpy(), oracles.pixel_shuffle(m, d))
        assert torch.equal(out, torch.nn.functional.pixel_shuffle(_t(m)[None], d)[0])

    def test_unshuffle_inverse(self):
        m = torch.randn(2, 8, 3, 5)
        assert torch.equal(pixel_unshuffle(pixel_shuffle(m, 2), 2), m)

    def test_bad_channels(self):
        with pytest.raises(ShapeError):
            pixel_shuffle(torch.zeros(3, 2, 2), 2)


class TestWindowAttention:
    def _params(self, rng, c):
        return [rng.normal(size=s) * 0.5 for s in ((3 * c, c), (3 * c,), (c, c), (c,))]

    def test_constant_map_identity_projections(self):
        c = 4
        eye3 = torch.cat([torch.eye(c, dtype=T)] * 3)
        m = torch.full((1, c, 4, 4), 0.3, dtype=T)
        out = window_attention(m, eye3, None, torch.eye(c, dtype=T), None, 2, 2)
        torch.testing.assert_close(out, m, rtol=0, atol=1e-15)

    def test_single_window_hand_sized(self):
        rng = np.random.default_rng(0)
        m = rng.normal(size=(2, 2, 2))
        wq, bq, wo, bo = self._params(rng, 2)
        out = window_attention(_t(m)[None], _t(wq), _t(bq), _t(wo), _t(bo), 1, 2)[0]
        ref = oracles.window_attention(m, wq, bq, wo, bo, 1, 2)
        np.testing.assert_allclose(out.numpy(), ref, atol=1e-10)

    @pytest.mark.parametrize("heads,ws,h,w", [(1, 2, 4, 4), (2, 2, 4, 6), (2, 4, 8, 8)])
    def test_loop_reference(self, heads, ws, h, w):
        rng = np.random.default_rng(heads * 10 + ws)
        c = 4
        m = rng.normal(size=(c, h, w))
        wq, bq, wo, bo = self._params(rng, c)
        bias = rng.normal(size=(heads, ws * ws, ws * ws))
        out = window_attention(_t(m)[None], _t(wq), _t(bq), _t(wo), _t(bo), heads, ws, _t(bias))[0]
        ref = oracles.window_attention(m, wq, bq, wo, bo, heads, ws, bias)
        np.testing.assert_allclose(out.numpy(), ref, atol=1e-10)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        wq, bq, wo, bo = self._params(rng, 4)
        _, attn = window_attention(torch.randn(1, 4, 4, 4, dtype=T), _t(wq), _t(bq), _t(wo), _t(bo),
                                   2, 2, return_attn=True)
        torch.testing.assert_close(attn.sum(-1), torch.ones_like(attn.sum(-1)))

    def test_relative_index_range(self):
        idx = relative_position_index(3)
        assert idx.shape == (9, 9)
        assert idx.min() == 0 and idx.max() == 24
        assert torch.all(idx.diagonal() == 12)

    def test_not_divisible(self):
        with pytest.raises(ShapeError):
            window_attention(torch.zeros(1, 2, 5, 4), torch.zeros(6, 2), None, torch.zeros(2, 2), None, 1, 2)


class TestConfig:
    def test_rejects_bad_values(self):
        for bad in (dict(scale=3), dict(channels=10, n_heads=4), dict(encoder_variant="x"),
                    dict(fusion_mode="y"), dict(fusion_branches=("conv9",))):
            with pytest.raises(ConfigurationError):
                ModelConfig(**bad)


class TestShapeChart:
    @pytest.mark.parametrize("variant", ENCODER_VARIANTS)
    @pytest.mark.parametrize("mode", FUSION_MODES)
    def test_matches_built_model(self, variant, mode):
        cfg = TINY.replace(encoder_variant=variant, fusion_mode=mode, relative_bias=(mode == "sum"))
        model = build_model(cfg)
        built = [(n, tuple(p.shape)) for n, p in model.named_parameters()]
        assert built == list(shape_chart(cfg).items())

    def test_tiny_count(self):
        n = sum(p.numel() for p in build_model(TINY).parameters())
        assert n == parameter_count(shape_chart(TINY)) == 51697

    def test_variants_differ_only_in_encoder(self):
        a = shape_chart(TINY.replace(encoder_variant="none"))
        b = shape_chart(TINY)
        diff = set(a.items()) ^ set(b.items())
        assert diff and all(name.startswith("encoder.") for name, _ in diff)

    def test_partial_branches(self):
        cfg = TINY.replace(fusion_branches=("conv3", "shift"))
        assert not any("conv5" in n for n in shape_chart(cfg))
        assert [n for n, _ in build_model(cfg).named_parameters()] == list(shape_chart(cfg))


class TestForward:
    def test_seed_determinism(self):
        a, b = build_model(TINY), build_model(TINY)
        for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(p, q), n
        c = build_model(TINY.replace(seed=1))
        assert not torch.equal(next(a.parameters()), next(c.parameters()))

    def test_global_rng_untouched(self):
        torch.manual_seed(5)
        expected = torch.rand(3)
        torch.manual_seed(5)
        build_model(TINY)
        assert torch.equal(torch.rand(3), expected)

    def test_shape_x4(self):
        out = super_resolve(build_model(TINY), Image(np.random.default_rng(0).random((24, 24))))
        assert out.shape == (96, 96)

    def test_shape_x2_padding_stripped(self):
        cfg = TINY.replace(scale=2)
        out = build_model(cfg)(torch.rand(1, 1, 16, 20))
        assert out.shape == (1, 1, 32, 40)
        out = build_model(cfg)(torch.rand(1, 1, 15, 17))
        assert out.shape == (1, 1, 30, 34)

    def test_zero_tail_constant(self):
        model = build_model(TINY)
        with torch.no_grad():
            model.tail.weight.zero_()
            model.tail.bias.fill_(0.37)
        out = model(torch.rand(1, 1, 8, 8))
        assert torch.all(out == model.tail.bias[0])

    def test_mirror_pad(self):
        x = torch.arange(6.0).reshape(1, 1, 2, 3)
        out = mirror_pad(x, 1, 2)
        assert out.shape == (1, 1, 3, 5)
        assert out[0, 0, 2].tolist() == [0.0, 1.0, 2.0, 1.0, 0.0]

    def test_rgb_rejected(self):
        with pytest.raises(ShapeError):
            super_resolve(build_model(TINY), Image(np.zeros((8, 8, 3))))

    def test_icnr_no_checkerboard_at_init(self):
        # all d*d sub-pixel phases of a channel start with the same kernel
        model = build_model(TINY.replace(n_blocks=0, encoder_variant="none")).to(T)
        with torch.no_grad():
            up = model.upsample(torch.randn(1, 16, 6, 6, dtype=T))
        phases = up.reshape(16, 16, 6, 6)
        assert torch.allclose(phases, phases[:, :1].expand_as(phases))

    def test_input_gradcheck(self):
        cfg = ModelConfig(scale=2, channels=5, n_blocks=1, n_heads=1, window_size=2,
                          fusion_branches=("conv3", "shift"))
        model = build_model(cfg, T)
        x = torch.rand(1, 1, 4, 4, dtype=T, requires_grad=True)
        assert torch.autograd.gradcheck(lambda inp: model(inp).sum(), (x,))
