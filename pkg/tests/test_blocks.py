"""Transformer building blocks, deterministic init, and frozen backbones."""

import math

import numpy as np
import pytest
import torch
import torch.nn as nn

from headlift.backbones import (TINY_VIT_DEPTH, BackboneConfig, FrozenBackbone,
                                load_external_checkpoint)
from headlift.blocks import (CrossAttention, EncoderBlock, LiftDecoderLayer, Mlp,
                             deterministic_init, fourier_features, mark_frozen,
                             mark_zero_init, patchify)
from headlift.errors import ConfigurationError
from headlift.geometry import DTYPE


def small_net():
    net = nn.Sequential(nn.Linear(8, 16), nn.LayerNorm(16), nn.Linear(16, 4))
    return net.to(DTYPE)


class TestDeterministicInit:
    def test_reproducible_across_instances(self):
        a = deterministic_init(small_net(), seed=3)
        b = deterministic_init(small_net(), seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_seed_changes_weights(self):
        a = deterministic_init(small_net(), seed=3)
        b = deterministic_init(small_net(), seed=4)
        assert not torch.equal(a[0].weight, b[0].weight)

    def test_rules(self):
        net = deterministic_init(small_net(), seed=0)
        w = net[0].weight.detach()
        assert float(w.abs().max()) <= 0.04
        assert float(w.std()) > 0
        assert torch.equal(net[1].weight, torch.ones(16, dtype=DTYPE))
        assert torch.equal(net[0].bias, torch.zeros(16, dtype=DTYPE))

    def test_zero_init_marker(self):
        net = small_net()
        mark_zero_init(net[2])
        deterministic_init(net, seed=0)
        assert torch.equal(net[2].weight, torch.zeros_like(net[2].weight))
        assert torch.equal(net[2].bias, torch.zeros_like(net[2].bias))
        assert float(net[0].weight.abs().max()) > 0

    def test_frozen_marker_preserved(self):
        net = small_net()
        with torch.no_grad():
            net[0].weight.fill_(7.0)
        mark_frozen(net[0])
        deterministic_init(net, seed=0)
        assert torch.equal(net[0].weight, torch.full((16, 8), 7.0, dtype=DTYPE))
        assert float(net[2].weight.abs().max()) <= 0.04


class TestFourierFeatures:
    def test_matches_manual_encoding(self):
        x = torch.tensor(np.random.default_rng(0).standard_normal((5, 3)), dtype=DTYPE)
        out = fourier_features(x, num_frequencies=4)
        assert out.shape == (5, 3 * 2 * 4)
        scales = np.array([2.0 ** k * math.pi for k in range(4)])
        ang = x.numpy()[..., None] * scales
        ref = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1).reshape(5, -1)
        np.testing.assert_allclose(out.numpy(), ref, atol=1e-15)

    def test_zero_input(self):
        out = fourier_features(torch.zeros(2, 3, dtype=DTYPE), num_frequencies=2)
        ref = np.tile(np.array([0.0, 0.0, 1.0, 1.0]), 3)
        np.testing.assert_allclose(out.numpy(), np.tile(ref, (2, 1)), atol=0)


class TestPatchify:
    def test_row_major_layout(self):
        rng = np.random.default_rng(1)
        img = torch.tensor(rng.uniform(0, 1, (8, 8, 3)), dtype=DTYPE)
        toks = patchify(img, 4)
        assert toks.shape == (4, 48)
        # patch (r, c) at row-major index 2r + c holds the image block verbatim
        for r in range(2):
            for c in range(2):
                block = img[4 * r:4 * r + 4, 4 * c:4 * c + 4].reshape(-1)
                assert torch.equal(toks[2 * r + c], block)


class TestBlocks:
    def test_mlp_zero_weights_zero_output(self):
        mlp = Mlp(6, 12).to(DTYPE)
        with torch.no_grad():
            for p in mlp.parameters():
                p.zero_()
        x = torch.tensor(np.random.default_rng(0).standard_normal((3, 6)), dtype=DTYPE)
        assert torch.equal(mlp(x), torch.zeros(3, 6, dtype=DTYPE))

    def test_encoder_block_shape_and_permutation_equivariance(self):
        block = deterministic_init(EncoderBlock(16, 4).to(DTYPE), seed=2)
        with torch.no_grad():
            for p in block.parameters():
                if p.ndim >= 2:
                    p.add_(0.1 * torch.randn(p.shape, dtype=DTYPE,
                                             generator=torch.Generator().manual_seed(0)))
        x = torch.tensor(np.random.default_rng(3).standard_normal((7, 16)), dtype=DTYPE)
        perm = torch.tensor([3, 1, 6, 0, 5, 2, 4])
        y = block(x)
        y_perm = block(x[perm])
        assert y.shape == (7, 16)
        np.testing.assert_allclose(y_perm.detach().numpy(),
                                   y[perm].detach().numpy(), atol=1e-12)


def manual_cross_attention(attn, x, ctx):
    """Independent per-query, per-head reimplementation on module weights."""
    h, d = attn.num_heads, x.shape[1]
    hd = d // h
    q = (x @ attn.q_proj.weight.T + attn.q_proj.bias).reshape(-1, h, hd)
    k = (ctx @ attn.k_proj.weight.T + attn.k_proj.bias).reshape(-1, h, hd)
    v = (ctx @ attn.v_proj.weight.T + attn.v_proj.bias).reshape(-1, h, hd)
    rows = []
    for t in range(x.shape[0]):
        heads = []
        for hh in range(h):
            scores = (k[:, hh, :] @ q[t, hh]) * attn.scale
            w = torch.softmax(scores, dim=0)
            heads.append(w @ v[:, hh, :])
        rows.append(torch.cat(heads))
    return torch.stack(rows) @ attn.proj.weight.T + attn.proj.bias


def perturbed_layer(dim=32, ctx_dim=32, heads=4, seed=0):
    layer = LiftDecoderLayer(dim, ctx_dim, heads).to(DTYPE)
    deterministic_init(layer, seed=seed)
    gen = torch.Generator().manual_seed(seed + 100)
    with torch.no_grad():
        for p in layer.parameters():
            p.add_(0.05 * torch.randn(p.shape, generator=gen, dtype=DTYPE))
    return layer


class TestLiftDecoderLayer:
    def test_zero_attention_equals_mlp_residual_exactly(self):
        layer = perturbed_layer()
        rng = np.random.default_rng(5)
        x = torch.tensor(rng.standard_normal((6, 32)), dtype=DTYPE)
        ctx = torch.tensor(rng.standard_normal((9, 32)), dtype=DTYPE)
        with torch.no_grad():
            out = layer(x, ctx, enable_attention=False)
            expected = x + layer.mlp(layer.norm_mlp(x))
        assert torch.equal(out, expected)

    def test_disabled_attention_ignores_context(self):
        layer = perturbed_layer(seed=1)
        rng = np.random.default_rng(6)
        x = torch.tensor(rng.standard_normal((4, 32)), dtype=DTYPE)
        ctx_a = torch.tensor(rng.standard_normal((5, 32)), dtype=DTYPE)
        ctx_b = torch.tensor(rng.standard_normal((11, 32)), dtype=DTYPE)
        with torch.no_grad():
            assert torch.equal(layer(x, ctx_a, enable_attention=False),
                               layer(x, ctx_b, enable_attention=False))

    def test_identity_at_init(self):
        layer = deterministic_init(LiftDecoderLayer(32, 32, 4).to(DTYPE), seed=2)
        rng = np.random.default_rng(7)
        x = torch.tensor(rng.standard_normal((5, 32)), dtype=DTYPE)
        ctx = torch.tensor(rng.standard_normal((8, 32)), dtype=DTYPE)
        with torch.no_grad():
            assert torch.equal(layer(x, ctx), x)

    def test_cross_attention_matches_manual(self):
        layer = perturbed_layer(seed=3)
        rng = np.random.default_rng(8)
        x = torch.tensor(rng.standard_normal((5, 32)), dtype=DTYPE)
        ctx = torch.tensor(rng.standard_normal((7, 32)), dtype=DTYPE)
        with torch.no_grad():
            got = layer.attn(x, ctx)
            ref = manual_cross_attention(layer.attn, x, ctx)
        np.testing.assert_allclose(got.numpy(), ref.numpy(), atol=1e-12)

    def test_duplicated_key_softmax_renormalization(self):
        # Appending an exact copy of key j rescales the softmax weights:
        # out' = (sum_i w_i v_i + w_j v_j) / (1 + w_j) per head.
        layer = perturbed_layer(seed=4)
        attn = layer.attn
        rng = np.random.default_rng(9)
        x = torch.tensor(rng.standard_normal((3, 32)), dtype=DTYPE)
        ctx = torch.tensor(rng.standard_normal((6, 32)), dtype=DTYPE)
        j = 2
        ctx_dup = torch.cat([ctx, ctx[j:j + 1]], dim=0)
        h, hd = attn.num_heads, 32 // attn.num_heads
        with torch.no_grad():
            got = attn(x, ctx_dup)
            q = (x @ attn.q_proj.weight.T + attn.q_proj.bias).reshape(-1, h, hd)
            k = (ctx @ attn.k_proj.weight.T + attn.k_proj.bias).reshape(-1, h, hd)
            v = (ctx @ attn.v_proj.weight.T + attn.v_proj.bias).reshape(-1, h, hd)
            rows = []
            for t in range(x.shape[0]):
                heads = []
                for hh in range(h):
                    w = torch.softmax((k[:, hh, :] @ q[t, hh]) * attn.scale, dim=0)
                    out = (w[:, None] * v[:, hh, :]).sum(0)
                    heads.append((out + w[j] * v[j, hh, :]) / (1.0 + w[j]))
                rows.append(torch.cat(heads))
            ref = torch.stack(rows) @ attn.proj.weight.T + attn.proj.bias
        assert float((got - ref).abs().max()) < 1e-5

    def test_duplicating_every_key_changes_little(self):
        # Every key twice halves every weight but leaves the mixture intact.
        layer = perturbed_layer(seed=5)
        rng = np.random.default_rng(10)
        x = torch.tensor(rng.standard_normal((4, 32)), dtype=DTYPE)
        ctx = torch.tensor(rng.standard_normal((5, 32)), dtype=DTYPE)
        with torch.no_grad():
            once = layer(x, ctx)
            twice = layer(x, torch.cat([ctx, ctx], dim=0))
        assert float((once - twice).abs().max()) < 1e-5


class TestBackboneConfig:
    def test_unknown_name(self):
        with pytest.raises(ConfigurationError):
            BackboneConfig("resnet")

    def test_taps_not_increasing(self):
        with pytest.raises(ConfigurationError):
            BackboneConfig("tiny_vit", tap_layers=(3, 1))

    def test_taps_empty(self):
        with pytest.raises(ConfigurationError):
            BackboneConfig("tiny_vit", tap_layers=())

    def test_external_needs_path(self):
        with pytest.raises(ConfigurationError):
            BackboneConfig("tiny_vit", weights_source="external_checkpoint")

    def test_tap_out_of_depth(self):
        cfg = BackboneConfig("tiny_vit", tap_layers=(TINY_VIT_DEPTH,))
        with pytest.raises(ConfigurationError):
            FrozenBackbone(cfg, 32, 8)


class TestFrozenBackbone:
    def image(self, seed=0, size=32):
        rng = np.random.default_rng(seed)
        return torch.tensor(rng.uniform(0, 1, (size, size, 3)), dtype=DTYPE)

    def test_bit_identical_across_instances(self):
        cfg = BackboneConfig("tiny_vit", seed=5)
        a = FrozenBackbone(cfg, 32, 8)
        b = FrozenBackbone(cfg, 32, 8)
        img = self.image()
        for ta, tb in zip(a(img), b(img)):
            assert torch.equal(ta, tb)

    def test_tap_count_and_shapes(self):
        bb = FrozenBackbone(BackboneConfig("tiny_vit"), 32, 8)
        taps = bb(self.image())
        assert len(taps) == 4
        for t in taps:
            assert t.shape == (16, 64)

    def test_tiny_conv_single_tap(self):
        bb = FrozenBackbone(BackboneConfig("tiny_conv", tap_layers=(0,)), 32, 8)
        taps = bb(self.image())
        assert len(taps) == 1
        assert taps[0].shape == (16, 64)

    def test_input_sensitivity(self):
        bb = FrozenBackbone(BackboneConfig("tiny_vit"), 32, 8)
        assert not torch.equal(bb(self.image(0))[0], bb(self.image(1))[0])

    def test_all_parameters_frozen(self):
        bb = FrozenBackbone(BackboneConfig("tiny_vit"), 32, 8)
        assert all(not p.requires_grad for p in bb.parameters())

    def test_no_gradient_into_backbone(self):
        bb = FrozenBackbone(BackboneConfig("tiny_vit"), 32, 8)
        img = self.image().clone().requires_grad_(True)
        loss = sum(t.sum() for t in bb(img))
        loss.backward()
        assert img.grad is not None and float(img.grad.abs().max()) > 0
        assert all(p.grad is None for p in bb.parameters())


class TestExternalCheckpoint:
    def save_archive(self, module, path, **overrides):
        arrays = {k: v.detach().numpy() for k, v in module.state_dict().items()}
        arrays.update(overrides)
        np.savez(path, **arrays)

    def test_round_trip_bit_equal(self, tmp_path):
        builtin = FrozenBackbone(BackboneConfig("tiny_vit", seed=9), 32, 8)
        path = str(tmp_path / "weights.npz")
        self.save_archive(builtin.net, path)
        loaded = FrozenBackbone(
            BackboneConfig("tiny_vit", weights_source="external_checkpoint",
                           checkpoint_path=path), 32, 8)
        img = torch.tensor(np.random.default_rng(2).uniform(0, 1, (32, 32, 3)),
                           dtype=DTYPE)
        for ta, tb in zip(builtin(img), loaded(img)):
            assert torch.equal(ta, tb)

    def test_missing_tensor_named(self, tmp_path):
        builtin = FrozenBackbone(BackboneConfig("tiny_vit"), 32, 8)
        arrays = {k: v.detach().numpy() for k, v in builtin.net.state_dict().items()}
        victim = sorted(arrays)[0]
        del arrays[victim]
        path = str(tmp_path / "missing.npz")
        np.savez(path, **arrays)
        with pytest.raises(ConfigurationError, match=victim.replace(".", r"\.")):
            load_external_checkpoint(builtin.net, path)

    def test_shape_mismatch_named(self, tmp_path):
        builtin = FrozenBackbone(BackboneConfig("tiny_vit"), 32, 8)
        path = str(tmp_path / "bad.npz")
        self.save_archive(builtin.net, path, **{"pos_embed": np.zeros((2, 2))})
        with pytest.raises(ConfigurationError, match="pos_embed"):
            load_external_checkpoint(builtin.net, path)
