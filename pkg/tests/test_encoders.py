"""Lift encoder (frozen + task branches, fusion) and the editing encoder."""

import math

import numpy as np
import pytest
import torch

from headlift.edit_encoder import (NUM_CLASSES, PALETTE, STYLE_COORD,
                                   BuiltinStyleEmbedder, EditEncoder,
                                   EditEncoderConfig, SegmentationMap,
                                   StyleEmbedding, embed_style,
                                   load_segmentation_png, palette_json,
                                   save_segmentation_png)
from headlift.errors import (ConfigurationError, EmptyForegroundError,
                             InvalidArgumentError, InvariantViolationError)
from headlift.geometry import DTYPE
from headlift.lift_encoder import (FeatureTokens, LiftEncoder, LiftEncoderConfig,
                                   mask_patches)
from headlift.preprocess import PatchSet, prepare, select_foreground_patches


def aligned_fixture(seed=0, size=64, fg=((16, 48), (12, 52))):
    rng = np.random.default_rng(seed)
    img = np.full((size, size, 3), 1.0)
    (r0, r1), (c0, c1) = fg
    img[r0:r1, c0:c1] = rng.uniform(0.1, 0.9, (r1 - r0, c1 - c0, 3))
    return prepare(img, size=size)


def full_grid_patches(size=64, patch=8):
    grid = size // patch
    kept = tuple((r, c) for r in range(grid) for c in range(grid))
    return PatchSet(patch_size=patch, kept=kept, total=grid * grid)


class TestFeatureTokens:
    def test_nan_rejected(self):
        tokens = torch.zeros(2, 4, dtype=DTYPE)
        tokens[0, 0] = float("nan")
        with pytest.raises(InvariantViolationError):
            FeatureTokens(tokens, ((0, 0), (0, 1)), "lift")

    def test_count_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            FeatureTokens(torch.zeros(2, 4, dtype=DTYPE), ((0, 0),), "lift")

    def test_bad_provenance(self):
        with pytest.raises(InvalidArgumentError):
            FeatureTokens(torch.zeros(1, 4, dtype=DTYPE), ((0, 0),), "oracle")


class TestMaskPatches:
    def test_thirty_percent_of_256_keeps_179(self):
        ps = full_grid_patches(size=128, patch=8)  # 16x16 grid = 256 patches
        assert ps.total == 256
        masked = mask_patches(ps, 0.3, seed=0)
        # ceil semantics: drop ceil(0.3 * 256) = 77, keep 179
        assert len(masked.kept) == 256 - math.ceil(0.3 * 256) == 179

    def test_subset_and_determinism(self):
        ps = full_grid_patches()
        a = mask_patches(ps, 0.25, seed=3)
        b = mask_patches(ps, 0.25, seed=3)
        c = mask_patches(ps, 0.25, seed=4)
        assert a.kept == b.kept
        assert set(a.kept) <= set(ps.kept)
        assert a.kept != c.kept

    def test_zero_fraction_identity(self):
        ps = full_grid_patches()
        assert mask_patches(ps, 0.0, seed=0).kept == ps.kept

    def test_bad_fraction(self):
        with pytest.raises(InvalidArgumentError):
            mask_patches(full_grid_patches(), 1.0, seed=0)


@pytest.fixture(scope="module")
def lift_encoder():
    return LiftEncoder(LiftEncoderConfig()).init_weights(seed=7)


@pytest.fixture(scope="module")
def edit_encoder():
    return EditEncoder(EditEncoderConfig()).init_weights(seed=5)


class TestLiftEncoder:
    @pytest.fixture
    def encoder(self, lift_encoder):
        return lift_encoder

    def test_frozen_branch_bit_identical(self, encoder):
        aligned = aligned_fixture()
        patches = select_foreground_patches(aligned, 8)
        a = encoder.encode_frozen(aligned, patches)
        b = encoder.encode_frozen(aligned, patches)
        assert torch.equal(a, b)
        assert a.shape == (len(patches.kept), 4 * 64)

    def test_single_kept_patch_shapes(self, encoder):
        aligned = aligned_fixture()
        ps = PatchSet(patch_size=8, kept=((2, 3),), total=64)
        assert encoder.encode_frozen(aligned, ps).shape == (1, 256)
        assert encoder.encode_task(aligned, ps).shape == (1, 128)
        assert encoder(aligned, ps).tokens.shape == (1, 256)

    def test_full_grid_token_count(self, encoder):
        aligned = aligned_fixture()
        ps = full_grid_patches()
        f2d = encoder(aligned, ps)
        assert len(f2d) == 64
        assert f2d.provenance == "lift"
        assert f2d.patch_coords == ps.kept

    def test_empty_foreground_raises(self, encoder):
        aligned = aligned_fixture()
        ps = PatchSet(patch_size=8, kept=(), total=64)
        with pytest.raises(EmptyForegroundError):
            encoder.encode_task(aligned, ps)

    def test_frozen_gets_no_grad_task_does(self, encoder):
        aligned = aligned_fixture()
        patches = select_foreground_patches(aligned, 8)
        encoder.zero_grad()
        f2d = encoder(aligned, patches)
        f2d.tokens.sum().backward()
        assert all(p.grad is None for p in encoder.frozen.parameters())
        for name in ("patch_embed.weight", "fuse_mlp.fc1.weight"):
            grad = dict(encoder.named_parameters())[name].grad
            assert grad is not None and float(grad.abs().max()) > 0

    def test_task_inputs_coordinate_keyed(self, encoder):
        # the pre-block token of a kept patch is identical whether the patch
        # arrives alone or inside the full grid: embeddings key on (row, col)
        aligned = aligned_fixture()
        full = full_grid_patches()
        from headlift.blocks import patchify
        pix = patchify(aligned.pixels_torch(), 8)
        with torch.no_grad():
            all_inputs = encoder.patch_embed(pix) + encoder.pos_embed
            sub = PatchSet(patch_size=8, kept=((3, 2), (5, 7)), total=64)
            idx = torch.from_numpy(sub.flat_indices(8))
            sub_inputs = encoder.patch_embed(pix[idx]) + encoder.pos_embed[idx]
        # tolerance: batched matmul may differ in last ulps across batch sizes
        np.testing.assert_allclose(sub_inputs.numpy(), all_inputs[idx].numpy(),
                                   atol=1e-12)

    def test_fuse_zero_weights_zero_output(self):
        enc = LiftEncoder(LiftEncoderConfig()).init_weights(seed=1)
        with torch.no_grad():
            for p in enc.fuse_mlp.parameters():
                p.zero_()
        aligned = aligned_fixture()
        patches = select_foreground_patches(aligned, 8)
        f2d = enc(aligned, patches)
        assert torch.equal(f2d.tokens,
                           torch.zeros(len(patches.kept), 256, dtype=DTYPE))

    def test_fuse_gradient_matches_finite_differences(self, encoder):
        rng = np.random.default_rng(4)
        f_enc = torch.tensor(rng.standard_normal((3, 128)), dtype=DTYPE,
                             requires_grad=True)
        f_dino = torch.tensor(rng.standard_normal((3, 256)), dtype=DTYPE)
        probe = torch.tensor(rng.standard_normal((3, 256)), dtype=DTYPE)
        coords = ((0, 0), (0, 1), (0, 2))
        loss = (encoder.fuse(f_enc, f_dino, coords).tokens * probe).sum()
        loss.backward()
        eps = 1e-5
        for i, j in [(0, 0), (1, 64), (2, 127)]:
            with torch.no_grad():
                bumped = f_enc.detach().clone()
                bumped[i, j] += eps
                hi = (encoder.fuse(bumped, f_dino, coords).tokens * probe).sum()
                bumped[i, j] -= 2 * eps
                lo = (encoder.fuse(bumped, f_dino, coords).tokens * probe).sum()
            fd = float((hi - lo) / (2 * eps))
            an = float(f_enc.grad[i, j])
            assert abs(an - fd) / max(abs(an) + abs(fd), 1e-8) < 1e-4

    def test_fuse_coordinate_mismatch(self, encoder):
        with pytest.raises(InvariantViolationError):
            encoder.fuse(torch.zeros(2, 128, dtype=DTYPE),
                         torch.zeros(2, 256, dtype=DTYPE), ((0, 0),))
        with pytest.raises(InvariantViolationError):
            encoder.fuse(torch.zeros(2, 128, dtype=DTYPE),
                         torch.zeros(3, 256, dtype=DTYPE), ((0, 0), (0, 1)))

    def test_wrong_image_size_rejected(self, encoder):
        aligned = aligned_fixture(size=32, fg=((8, 24), (8, 24)))
        ps = PatchSet(patch_size=8, kept=((0, 0),), total=16)
        with pytest.raises(InvalidArgumentError):
            encoder.encode_task(aligned, ps)

    def test_block_stack_permutation_equivariance(self, encoder):
        rng = np.random.default_rng(11)
        tokens = torch.tensor(rng.standard_normal((10, 128)), dtype=DTYPE)
        perm = torch.tensor(rng.permutation(10))
        with torch.no_grad():
            out = tokens
            out_p = tokens[perm]
            for block in encoder.blocks:
                out = block(out)
                out_p = block(out_p)
        np.testing.assert_allclose(out_p.numpy(), out[perm].numpy(), atol=1e-12)


class TestSegmentationMap:
    def test_one_hot(self):
        seg = SegmentationMap(np.array([[0, 3], [18, 1]]))
        oh = seg.one_hot
        assert oh.shape == (2, 2, 19)
        assert oh.sum() == 4
        assert oh[0, 1, 3] == 1 and oh[1, 0, 18] == 1

    def test_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            SegmentationMap(np.array([[0, 19]]))
        with pytest.raises(InvalidArgumentError):
            SegmentationMap(np.array([[-1, 0]]))

    def test_non_square(self):
        with pytest.raises(InvalidArgumentError):
            SegmentationMap(np.zeros((2, 3), dtype=np.int64))

    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        seg = SegmentationMap(rng.integers(0, NUM_CLASSES, (32, 32)))
        path = str(tmp_path / "seg.png")
        save_segmentation_png(seg, path)
        back = load_segmentation_png(path)
        assert (back.classes == seg.classes).all()

    def test_palette(self):
        assert len(PALETTE) == 19
        assert PALETTE[0][0] == "background"
        names = {v["name"] for v in __import__("json").loads(palette_json()).values()}
        assert len(names) == 19


class TestStyleEmbedding:
    def test_unit_norm_enforced(self):
        with pytest.raises(InvalidArgumentError):
            StyleEmbedding(torch.ones(8, dtype=DTYPE), "image")

    def test_image_embedding_deterministic(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0, 1, (40, 40, 3))
        a = embed_style(img)
        b = embed_style(img)
        assert torch.equal(a.vector, b.vector)
        assert a.source == "image"
        assert abs(float(torch.linalg.norm(a.vector)) - 1.0) <= 1e-5

    def test_distinct_prompts_distinct_embeddings(self):
        prompts = ["curly red hair", "a bronze statue", "pale skin",
                   "blue eyes", "van gogh painting"]
        vecs = [embed_style(p).vector for p in prompts]
        for i in range(len(vecs)):
            for j in range(i + 1, len(vecs)):
                cos = float((vecs[i] * vecs[j]).sum())
                assert cos < 1.0 - 1e-6

    def test_text_requires_text_tower(self):
        class ImageOnly:
            def embed_image(self, img):
                return np.ones(8)

        with pytest.raises(ConfigurationError):
            embed_style("some prompt", ImageOnly())

    def test_text_deterministic_and_source(self):
        a = embed_style("gold jewelry")
        b = embed_style("gold jewelry")
        assert torch.equal(a.vector, b.vector)
        assert a.source == "text" and a.descriptor == "gold jewelry"


class TestEditEncoder:
    @pytest.fixture
    def encoder(self, edit_encoder):
        return edit_encoder

    def seg_fixture(self, seed=0, size=64):
        rng = np.random.default_rng(seed)
        return SegmentationMap(rng.integers(0, NUM_CLASSES, (size, size)))

    def test_token_count_desk(self, encoder):
        f2d = encoder(self.seg_fixture(), embed_style("hair"))
        assert len(f2d) == 8 * 8 + 1
        assert f2d.provenance == "edit"
        assert f2d.patch_coords[-1] == STYLE_COORD

    def test_token_count_service_scale(self):
        enc = EditEncoder(EditEncoderConfig(image_size=256, patch_size=16))
        enc.init_weights(seed=2)
        seg = self.seg_fixture(size=256)
        f2d = enc(seg, embed_style("hat"))
        assert len(f2d) == 256 + 1

    def test_input_tokens_differ_only_at_style_position(self, encoder):
        seg = self.seg_fixture(seed=3)
        with torch.no_grad():
            a = encoder.input_tokens(seg, embed_style("red hair"))
            b = encoder.input_tokens(seg, embed_style("blue hair"))
        assert torch.equal(a[:-1], b[:-1])
        assert not torch.equal(a[-1], b[-1])

    def test_seg_tokens_function_of_seg_only(self, encoder):
        style = embed_style("statue")
        with torch.no_grad():
            a = encoder.input_tokens(self.seg_fixture(seed=1), style)
            b = encoder.input_tokens(self.seg_fixture(seed=2), style)
        assert torch.equal(a[-1], b[-1])
        assert not torch.equal(a[:-1], b[:-1])

    def test_all_background_valid(self, encoder):
        seg = SegmentationMap(np.zeros((64, 64), dtype=np.int64))
        f2d = encoder(seg, embed_style("anything"))
        assert len(f2d) == 65
        assert bool(torch.isfinite(f2d.tokens).all())

    def test_deterministic_given_weights(self, encoder):
        seg = self.seg_fixture(seed=4)
        style = embed_style("bronze")
        with torch.no_grad():
            assert torch.equal(encoder(seg, style).tokens,
                               encoder(seg, style).tokens)

    def test_size_mismatch_rejected(self, encoder):
        with pytest.raises(InvalidArgumentError):
            encoder(self.seg_fixture(size=32), embed_style("x"))
