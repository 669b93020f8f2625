"""3D ViT decoder: template-initialized queries iteratively cross-attend to
the 2D feature tokens and decode into a GaussianCloud.

Each decoder layer computes F = F_prev + MLP(F_prev + ATTN(F_prev, F_2D))
with no attention among 3D tokens, so per-patch computations stay independent
end to end.  The visualization protocol reruns the forward pass with
cross-attention enabled only in a prefix of the layers while keeping every
MLP and skip connection.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .blocks import (LiftDecoderLayer, Mlp, deterministic_init,
                     fourier_features, mark_zero_init)
from .errors import InvalidArgumentError, InvariantViolationError
from .geometry import DTYPE, GaussianCloud
from .splat import rasterize

RAW_ATTR_WIDTH = 14  # offset 3 + scale 3 + rotation 4 + opacity 1 + color 3
OFFSET_BOUND = 0.25
SCALE_CLAMP = (-8.0, 1.0)
SCALE_BIAS_INIT = -3.0


@dataclass(frozen=True)
class DecoderState:
    """Per-3D-patch latents after `layer_index` decoder layers."""

    tokens: torch.Tensor  # (Np, D)
    layer_index: int

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise InvalidArgumentError("decoder state tokens must be (Np, D)")
        if not bool(torch.isfinite(self.tokens.detach()).all()):
            raise InvariantViolationError("decoder state must be finite")

    @property
    def num_patches(self):
        return self.tokens.shape[0]


@dataclass(frozen=True)
class GaussianHeadOutput:
    raw: torch.Tensor  # (Np, 16, RAW_ATTR_WIDTH) pre-activation
    cloud: GaussianCloud


@dataclass(frozen=True)
class LiftDecoderConfig:
    dim: int = 256
    num_layers: int = 6
    num_heads: int = 8
    mlp_ratio: int = 4
    num_frequencies: int = 6
    gaussians_per_patch: int = 16

    def __post_init__(self):
        if self.dim % self.gaussians_per_patch:
            raise InvalidArgumentError("dim must be divisible by gaussians_per_patch")


class LiftDecoder(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        cfg = config or LiftDecoderConfig()
        self.config = cfg
        freq_dim = 3 * 2 * cfg.num_frequencies
        self.seed_embedding = nn.Embedding(1, cfg.dim)
        self.query_mlp = Mlp(freq_dim, cfg.dim, cfg.dim)
        self.layers = nn.ModuleList(
            LiftDecoderLayer(cfg.dim, cfg.dim, cfg.num_heads, cfg.mlp_ratio)
            for _ in range(cfg.num_layers))
        g = cfg.gaussians_per_patch
        self.sub_dim = cfg.dim // g
        self.expand = nn.Linear(cfg.dim, g * self.sub_dim)
        self.head_offset = nn.Linear(self.sub_dim, 3)
        self.head_scale = nn.Linear(self.sub_dim, 3)
        self.head_rotation = nn.Linear(self.sub_dim, 4)
        self.head_opacity = nn.Linear(self.sub_dim, 1)
        self.head_color = nn.Linear(self.sub_dim, 3)
        self.to(DTYPE)

    def init_weights(self, seed):
        deterministic_init(self, seed)
        # start from compact splats (exp(-3) ~ 0.05 scene units): full-extent
        # initial gaussians cover the whole frame, which both drowns the first
        # render in overlap and makes compositing cost scale with N * pixels
        with torch.no_grad():
            self.head_scale.bias.fill_(SCALE_BIAS_INIT)
        return self

    @property
    def num_layers(self):
        return self.config.num_layers

    def init_queries(self, template):
        """Layer-0 state: shared seed embedding + MLP of centroid Fourier features."""
        cents = template.centroids_torch()
        feats = fourier_features(cents, self.config.num_frequencies)
        tokens = self.seed_embedding.weight[0] + self.query_mlp(feats)
        return DecoderState(tokens, 0)

    def decode_layer(self, state, f2d, enable_attention=True):
        """Apply decoder layer state.layer_index + 1."""
        i = state.layer_index
        if not 0 <= i < self.config.num_layers:
            raise InvalidArgumentError(
                f"state at layer {i} cannot be advanced; decoder has "
                f"{self.config.num_layers} layers")
        if f2d.width != self.config.dim:
            raise InvariantViolationError(
                f"context width {f2d.width} != decoder width {self.config.dim}")
        tokens = self.layers[i](state.tokens, f2d.tokens, enable_attention)
        return DecoderState(tokens, i + 1)

    def decode(self, f2d, template, attention_upto=None, keep_intermediate=False):
        """init_queries then K decode_layer steps.

        attention_upto = i activates cross-attention only in layers 1..i
        (0 disables all, K activates all); None means all layers attend.
        """
        k = self.config.num_layers
        if attention_upto is not None and not 0 <= attention_upto <= k:
            raise InvalidArgumentError(
                f"attention_upto must lie in [0, {k}], got {attention_upto}")
        state = self.init_queries(template)
        states = [state]
        for j in range(1, k + 1):
            enable = attention_upto is None or j <= attention_upto
            state = self.decode_layer(state, f2d, enable_attention=enable)
            states.append(state)
        return (state, states) if keep_intermediate else state

    def gaussian_head(self, state, template):
        """Decode the final state into one Gaussian per template vertex."""
        if state.layer_index != self.config.num_layers:
            raise InvalidArgumentError(
                f"gaussian_head expects a final state at layer "
                f"{self.config.num_layers}, got {state.layer_index}")
        g = self.config.gaussians_per_patch
        order = torch.argsort(torch.from_numpy(template.patch_index), stable=True)
        anchors = template.vertices_torch()[order].reshape(-1, g, 3)
        if anchors.shape[0] != state.num_patches:
            raise InvalidArgumentError(
                f"template has {anchors.shape[0]} patches, state has {state.num_patches}")

        sub = self.expand(state.tokens).reshape(-1, g, self.sub_dim)
        raw = torch.cat([
            self.head_offset(sub), self.head_scale(sub), self.head_rotation(sub),
            self.head_opacity(sub), self.head_color(sub),
        ], dim=-1)

        offset, scale_raw, quat_raw, opac_raw, color_raw = torch.split(
            raw, [3, 3, 4, 1, 3], dim=-1)
        positions = anchors + OFFSET_BOUND * torch.tanh(offset)
        scales = torch.exp(torch.clamp(scale_raw, *SCALE_CLAMP))
        qnorm = torch.linalg.norm(quat_raw, dim=-1, keepdim=True)
        identity = torch.zeros_like(quat_raw)
        identity[..., 0] = 1.0
        rotations = torch.where(qnorm < 1e-8, identity,
                                quat_raw / torch.clamp(qnorm, min=1e-8))
        # logit clamp keeps opacity strictly inside (0, 1): sigmoid saturates
        # to exactly 1.0 in float64 somewhere past raw = 36
        opacities = torch.sigmoid(torch.clamp(opac_raw, -16.0, 16.0))[..., 0]
        colors = torch.sigmoid(color_raw)

        n = anchors.shape[0] * g
        cloud = GaussianCloud(
            positions.reshape(n, 3), scales.reshape(n, 3), rotations.reshape(n, 4),
            opacities.reshape(n), colors.reshape(n, 3))
        return GaussianHeadOutput(raw, cloud)

    def forward(self, f2d, template):
        return self.gaussian_head(self.decode(f2d, template), template).cloud

    def visualize_decoder(self, f2d, template, upto_layer, camera,
                          background=(1.0, 1.0, 1.0)):
        """Render the cloud produced with attention active only in layers
        <= upto_layer (MLPs and skips retained everywhere)."""
        k = self.config.num_layers
        if not 0 <= upto_layer <= k:
            raise InvalidArgumentError(
                f"upto_layer must lie in [0, {k}], got {upto_layer}")
        state = self.decode(f2d, template, attention_upto=upto_layer)
        cloud = self.gaussian_head(state, template).cloud
        return rasterize(cloud.detach(), camera, background)

    def decoder_gallery(self, f2d, template, camera, background=(1.0, 1.0, 1.0)):
        """The visualization sequence for upto_layer = 0..K."""
        return [self.visualize_decoder(f2d, template, i, camera, background)
                for i in range(self.config.num_layers + 1)]
