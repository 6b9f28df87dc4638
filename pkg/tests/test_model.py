"""Architecture tests: cross-attention oracle, stage geometry, ablation
toggles, state round trips, and end-to-end determinism."""

import numpy as np
import pytest

from lpcanet import tensor as T
from lpcanet.model import (
    UPSAMPLE_MODES,
    CrossAttention,
    LPCANet,
    SpatialFeatureExtractor,
    ablation_variant,
    build_model,
    count_params_flops,
    make_config,
)
from lpcanet.tensor import ShapeError, Tensor


def tiny_inputs(rng, n=1, hw=64):
    rgb = Tensor(rng.uniform(0, 1, (n, 3, hw, hw)).astype(np.float32))
    depth = Tensor(rng.uniform(0, 1, (n, 1, hw, hw)).astype(np.float32))
    return rgb, depth


def attention_reference(module, f_rgb, f_depth):
    """Straight-line numpy recomputation of the fusion block: tokenize, project
    q/k/v, per-head scaled dot-product softmax attention, merge, project out."""
    n, c, h, w = f_rgb.shape
    nh, dz = module.num_heads, module.head_dim

    def tokens(x):
        return x.reshape(n, x.shape[1], h * w).transpose(0, 2, 1)

    def linear(x, layer):
        return x @ layer.weight.data.T + layer.bias.data

    q = linear(tokens(f_rgb), module.q_proj)
    k = linear(tokens(f_depth), module.k_proj)
    v = linear(tokens(f_depth), module.v_proj)
    heads = []
    for i in range(nh):
        qh, kh, vh = (t[0, :, i * dz : (i + 1) * dz] for t in (q, k, v))
        scores = qh @ kh.T / np.sqrt(dz)
        e = np.exp(scores - scores.max(axis=-1, keepdims=True))
        attn = e / e.sum(axis=-1, keepdims=True)
        heads.append(attn @ vh)
    ctx = np.concatenate(heads, axis=-1)[None]
    out = linear(ctx, module.out_proj)
    return out.transpose(0, 2, 1).reshape(n, nh * dz, h, w)


class TestCrossAttention:
    def test_matches_straight_line_recomputation(self):
        rng = np.random.default_rng(0)
        module = CrossAttention(4, 4, 4, num_heads=2, dtype=np.float64)
        module.init(rng)
        for p in module.named_parameters().values():
            p.data[...] = rng.uniform(-1, 1, p.shape)
        f_rgb = rng.uniform(-1, 1, (1, 4, 2, 2))
        f_depth = rng.uniform(-1, 1, (1, 4, 2, 2))
        out = module(Tensor(f_rgb), Tensor(f_depth)).data
        ref = attention_reference(module, f_rgb, f_depth)
        np.testing.assert_allclose(out, ref, atol=1e-6)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        module = CrossAttention(4, 4, 4, num_heads=2, dtype=np.float64)
        module.init(rng)
        f_rgb = Tensor(rng.uniform(-1, 1, (1, 4, 2, 2)))
        f_depth = Tensor(rng.uniform(-1, 1, (1, 4, 2, 2)))
        _, attn = module(f_rgb, f_depth, return_attn=True)
        assert attn.shape == (2, 4, 4)  # (batch*heads, queries, keys)
        np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_invariant_to_depth_token_permutation(self):
        rng = np.random.default_rng(2)
        module = CrossAttention(4, 4, 4, num_heads=2, dtype=np.float64)
        module.init(rng)
        for p in module.named_parameters().values():
            p.data[...] = rng.uniform(-1, 1, p.shape)
        f_rgb = rng.uniform(-1, 1, (1, 4, 2, 2))
        f_depth = rng.uniform(-1, 1, (1, 4, 2, 2))
        perm = rng.permutation(4)
        shuffled = f_depth.reshape(1, 4, 4)[:, :, perm].reshape(1, 4, 2, 2)
        out_a = module(Tensor(f_rgb), Tensor(f_depth)).data
        out_b = module(Tensor(f_rgb), Tensor(shuffled)).data
        np.testing.assert_allclose(out_a, out_b, atol=1e-10)

    def test_rejects_spatial_mismatch(self):
        module = CrossAttention(4, 4, 4, num_heads=2)
        module.init(np.random.default_rng(0))
        with pytest.raises(ShapeError):
            module(Tensor(np.zeros((1, 4, 2, 2), dtype=np.float32)),
                   Tensor(np.zeros((1, 4, 4, 4), dtype=np.float32)))

    def test_param_count_closed_form(self):
        module = CrossAttention(24, 64, 64, num_heads=4)
        expected = (24 + 1) * 64 + 2 * (64 + 1) * 64 + (64 + 1) * 64
        assert module.param_count() == expected

    def test_rejects_heads_not_dividing_channels(self):
        with pytest.raises(ValueError):
            CrossAttention(4, 4, 6, num_heads=4)


class TestConfig:
    def test_tiny_stage_geometry(self):
        cfg = make_config("tiny")
        assert [cfg.stage_hw(i) for i in range(4)] == [(16, 16), (8, 8), (4, 4), (2, 2)]

    def test_paper_stage_geometry(self):
        cfg = make_config("paper")
        assert [cfg.stage_hw(i) for i in range(4)] == [(80, 80), (40, 40), (20, 20), (10, 10)]
        assert cfg.depth_stage_channels == (64, 128, 256, 512)

    def test_input_must_divide_decoder_stride(self):
        with pytest.raises(ValueError):
            make_config("tiny", input_hw=(60, 60))

    def test_rejects_bad_upsample_mode(self):
        with pytest.raises(ValueError):
            make_config("tiny", upsample_mode="deconv9000")

    def test_rejects_heads_channel_mismatch(self):
        with pytest.raises(ValueError):
            make_config("tiny", cam_channels=(6, 16, 32, 64))

    def test_ablation_toggles(self):
        cfg = make_config("tiny")
        assert not ablation_variant(cfg, "no_cam").use_cam
        assert ablation_variant(cfg, "no_sfe").sfe_stage_mask == (False,) * 4
        assert ablation_variant(cfg, "sfe_stage_mask", (1, 0, 0, 0)).sfe_stage_mask == (
            True, False, False, False)
        wide = ablation_variant(cfg, "lpm_width", 16)
        assert wide.depth_stage_channels == (16, 32, 64, 128)
        assert wide.cam_channels == (16, 32, 64, 128)
        assert ablation_variant(cfg, "upsample_mode", "nearest").upsample_mode == "nearest"
        with pytest.raises(ValueError):
            ablation_variant(cfg, "bogus_toggle")


class TestLPCANet:
    def test_tiny_stage_shapes_and_mask(self):
        model = build_model(make_config("tiny"), seed=0)
        model.eval()
        rgb, depth = tiny_inputs(np.random.default_rng(0))
        with T.no_grad():
            stages = model.forward_features(rgb, depth)
            mask = model(rgb, depth)
        sizes = [s[2].shape[2:] for s in stages]
        assert sizes == [(16, 16), (8, 8), (4, 4), (2, 2)]
        chans = [s[2].shape[1] for s in stages]
        assert chans == [8, 16, 32, 64]
        assert stages[3][3] is None  # last-stage refinement disabled by default
        assert mask.shape == (1, 1, 64, 64)
        assert mask.data.min() >= 0.0 and mask.data.max() <= 1.0

    def test_zero_depth_gives_zero_pyramid_features(self):
        model = build_model(make_config("tiny"), seed=0)
        model.eval()
        depth = Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32))
        with T.no_grad():
            feats = model.depth_pyramid(depth)
        for f in feats:
            np.testing.assert_array_equal(f.data, 0.0)

    def test_input_shape_validation(self):
        model = build_model(make_config("tiny"), seed=0)
        ok_rgb = Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32))
        ok_depth = Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32))
        with pytest.raises(ShapeError):
            model(Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32)), ok_depth)
        with pytest.raises(ShapeError):
            model(ok_rgb, Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32)))
        with pytest.raises(ShapeError):
            model(ok_rgb, Tensor(np.zeros((2, 1, 64, 64), dtype=np.float32)))

    def test_build_seed_determinism(self):
        a = build_model(make_config("tiny"), seed=42)
        b = build_model(make_config("tiny"), seed=42)
        for name, p in a.named_parameters().items():
            assert np.array_equal(p.data, b.named_parameters()[name].data), name

    def test_forward_twice_bit_identical(self):
        model = build_model(make_config("tiny"), seed=0)
        model.eval()
        rgb, depth = tiny_inputs(np.random.default_rng(1))
        with T.no_grad():
            a = model(rgb, depth).data.copy()
            b = model(rgb, depth).data.copy()
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("mode", UPSAMPLE_MODES)
    def test_upsample_modes_all_reach_full_resolution(self, mode):
        cfg = make_config("tiny", upsample_mode=mode)
        model = build_model(cfg, seed=0)
        model.eval()
        rgb, depth = tiny_inputs(np.random.default_rng(2))
        with T.no_grad():
            out = model(rgb, depth)
        assert out.shape == (1, 1, 64, 64)

    def test_no_cam_and_no_sfe_variants_run(self):
        rng = np.random.default_rng(3)
        rgb, depth = tiny_inputs(rng)
        for toggle in ("no_cam", "no_sfe"):
            cfg = ablation_variant(make_config("tiny"), toggle)
            model = build_model(cfg, seed=0)
            model.eval()
            with T.no_grad():
                out = model(rgb, depth)
            assert out.shape == (1, 1, 64, 64)

    def test_no_sfe_removes_refinement_parameters(self):
        full = build_model(make_config("tiny"), seed=0)
        bare = build_model(ablation_variant(make_config("tiny"), "no_sfe"), seed=0)
        assert bare.param_count() < full.param_count()
        assert not any("sfe" in n for n in bare.named_parameters())

    def test_state_round_trip_and_mismatch(self):
        src = build_model(make_config("tiny"), seed=7)
        dst = build_model(make_config("tiny"), seed=8)
        src.eval(), dst.eval()
        rgb, depth = tiny_inputs(np.random.default_rng(4))
        dst.load_state(src.state())
        with T.no_grad():
            np.testing.assert_array_equal(src(rgb, depth).data, dst(rgb, depth).data)
        other = build_model(ablation_variant(make_config("tiny"), "no_sfe"), seed=0)
        with pytest.raises(ValueError):
            other.load_state(src.state())

    def test_count_params_flops_consistent(self):
        cfg = make_config("tiny")
        params, macs = count_params_flops(cfg)
        assert params == LPCANet(cfg).param_count()
        assert macs > 0

    def test_sfe_preserves_spatial_size(self):
        rng = np.random.default_rng(5)
        sfe = SpatialFeatureExtractor(8, dtype=np.float64)
        sfe.init(rng)
        sfe.eval()
        x = Tensor(rng.uniform(-1, 1, (2, 8, 6, 7)))
        assert sfe(x).shape == (2, 8, 6, 7)
