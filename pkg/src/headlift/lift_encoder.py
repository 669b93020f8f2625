"""Dual-branch 2D encoder: frozen multi-layer backbone features fused with a
trainable task ViT into the decoder-facing token sequence F_2D.

Both branches emit exactly one token per kept foreground patch, keyed by the
same (row, col) grid coordinate, and are concatenated patchwise through a
small MLP into the decoder width.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .backbones import BackboneConfig, FrozenBackbone
from .blocks import EncoderBlock, Mlp, deterministic_init, patchify
from .errors import EmptyForegroundError, InvalidArgumentError, InvariantViolationError
from .geometry import DTYPE
from .preprocess import PatchSet


@dataclass(frozen=True)
class FeatureTokens:
    """Per-2D-patch feature sequence the 3D decoder cross-attends to."""

    tokens: torch.Tensor  # (|P|, D)
    patch_coords: tuple  # ((row, col), ...) aligned with tokens
    provenance: str  # "lift" or "edit"

    def __post_init__(self):
        object.__setattr__(self, "patch_coords",
                           tuple((int(r), int(c)) for r, c in self.patch_coords))
        if self.provenance not in ("lift", "edit"):
            raise InvalidArgumentError(f"unknown provenance {self.provenance!r}")
        if self.tokens.ndim != 2 or self.tokens.shape[0] != len(self.patch_coords):
            raise InvalidArgumentError(
                f"tokens {tuple(self.tokens.shape)} do not match "
                f"{len(self.patch_coords)} patch coords")
        if not bool(torch.isfinite(self.tokens.detach()).all()):
            raise InvariantViolationError("feature tokens must be finite")

    def __len__(self):
        return self.tokens.shape[0]

    @property
    def width(self):
        return self.tokens.shape[1]


@dataclass(frozen=True)
class LiftEncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    dim: int = 256  # decoder width D
    enc_dim: int = 128
    enc_blocks: int = 4
    enc_heads: int = 4
    backbone: BackboneConfig = field(default_factory=lambda: BackboneConfig("tiny_vit"))

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise InvalidArgumentError("image_size must be divisible by patch_size")

    @property
    def grid(self):
        return self.image_size // self.patch_size


def mask_patches(patches, fraction, seed):
    """Drop ceil(fraction * |kept|) randomly chosen kept patches."""
    if not 0.0 <= fraction < 1.0:
        raise InvalidArgumentError("fraction must lie in [0, 1)")
    drop = math.ceil(fraction * len(patches.kept))
    rng = np.random.default_rng(seed)
    dropped = set(rng.choice(len(patches.kept), size=drop, replace=False).tolist())
    kept = tuple(rc for i, rc in enumerate(patches.kept) if i not in dropped)
    return PatchSet(patch_size=patches.patch_size, kept=kept, total=patches.total)


class LiftEncoder(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        cfg = config or LiftEncoderConfig()
        self.config = cfg
        self.frozen = FrozenBackbone(cfg.backbone, cfg.image_size, cfg.patch_size)
        p = cfg.patch_size
        self.patch_embed = nn.Linear(3 * p * p, cfg.enc_dim)
        self.pos_embed = nn.Parameter(torch.zeros(cfg.grid * cfg.grid, cfg.enc_dim))
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.enc_dim, cfg.enc_heads) for _ in range(cfg.enc_blocks))
        self.norm = nn.LayerNorm(cfg.enc_dim)
        fused_in = cfg.enc_dim + self.frozen.num_taps * cfg.backbone.feature_dim
        self.fuse_mlp = Mlp(fused_in, cfg.dim, cfg.dim)
        self.to(DTYPE)
        self.frozen.requires_grad_(False)

    def init_weights(self, seed):
        # The frozen branch is marked and keeps its own fixed-seed weights.
        deterministic_init(self, seed)
        return self

    def _check_inputs(self, aligned, patches):
        if aligned.size != self.config.image_size:
            raise InvalidArgumentError(
                f"aligned image size {aligned.size} != configured {self.config.image_size}")
        if patches.patch_size != self.config.patch_size:
            raise InvalidArgumentError(
                f"patch size {patches.patch_size} != configured {self.config.patch_size}")

    def encode_frozen(self, aligned, patches):
        """Stacked frozen features per kept patch: (|P|, num_taps * width)."""
        self._check_inputs(aligned, patches)
        idx = torch.from_numpy(patches.flat_indices(self.config.grid))
        with torch.no_grad():
            taps = self.frozen(aligned.pixels_torch())
            kept = [t[idx] for t in taps]
            return torch.cat(kept, dim=1)

    def encode_task(self, aligned, patches):
        """Trainable branch over only the kept patches: (|P|, enc_dim)."""
        self._check_inputs(aligned, patches)
        if len(patches) == 0:
            raise EmptyForegroundError("no foreground patches to encode")
        idx = torch.from_numpy(patches.flat_indices(self.config.grid))
        pix = patchify(aligned.pixels_torch(), self.config.patch_size)[idx]
        tokens = self.patch_embed(pix) + self.pos_embed[idx]
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens)

    def fuse(self, f_enc, f_dino, patch_coords):
        """Patchwise concatenation projected to the decoder width."""
        if f_enc.shape[0] != f_dino.shape[0]:
            raise InvariantViolationError(
                f"branch token counts differ: {f_enc.shape[0]} vs {f_dino.shape[0]}")
        if f_enc.shape[0] != len(tuple(patch_coords)):
            raise InvariantViolationError("patch coords do not match token count")
        fused = self.fuse_mlp(torch.cat([f_enc, f_dino], dim=1))
        return FeatureTokens(fused, tuple(patch_coords), "lift")

    def forward(self, aligned, patches):
        f_dino = self.encode_frozen(aligned, patches)
        f_enc = self.encode_task(aligned, patches)
        return self.fuse(f_enc, f_dino, patches.kept)
