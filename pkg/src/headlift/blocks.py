"""Shared transformer building blocks and deterministic initialization."""

import math

import torch
import torch.nn as nn

from .geometry import DTYPE


def mark_zero_init(module):
    """Flag a leaf module so deterministic_init zeroes it after seeding."""
    module._headlift_zero_init = True
    return module


def mark_frozen(module):
    """Flag a submodule whose weights deterministic_init must leave alone."""
    module._headlift_frozen = True
    return module


def deterministic_init(module, seed):
    """Seed every parameter reproducibly, independent of construction order.

    Parameters are visited in sorted-name order with a local generator:
    matrices get clamped normal(0, 0.02) draws, 1-d weights (norms) get ones,
    everything else zeros.  Modules marked with mark_zero_init are then zeroed
    so networks that rely on identity-at-init start there exactly; subtrees
    marked with mark_frozen keep their existing weights untouched.
    """
    skip = tuple(name + "." for name, sub in module.named_modules()
                 if getattr(sub, "_headlift_frozen", False))
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
            if name.startswith(skip):
                continue
            if param.ndim >= 2:
                draw = torch.empty(param.shape, dtype=param.dtype)
                draw.normal_(0.0, 0.02, generator=gen).clamp_(-0.04, 0.04)
                param.copy_(draw)
            elif name.rsplit(".", 1)[-1] == "weight":
                param.fill_(1.0)
            else:
                param.zero_()
        for prefix, sub in module.named_modules():
            if getattr(sub, "_headlift_zero_init", False) and \
                    not (prefix + ".").startswith(skip):
                for param in sub.parameters(recurse=False):
                    param.zero_()
    return module


def fourier_features(x, num_frequencies=6):
    """Sinusoidal encoding: (..., C) -> (..., C * 2 * num_frequencies)."""
    scales = (2.0 ** torch.arange(num_frequencies, dtype=x.dtype)) * math.pi
    angles = x[..., None] * scales  # (..., C, F)
    feats = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
    return feats.flatten(-2)


class Mlp(nn.Module):
    def __init__(self, dim, hidden, out_dim=None):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, out_dim or dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class SelfAttention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        t, d = x.shape
        qkv = self.qkv(x).reshape(t, 3, self.num_heads, d // self.num_heads)
        q, k, v = qkv.permute(1, 2, 0, 3)  # (heads, T, head_dim)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(t, d)
        return self.proj(out)


class CrossAttention(nn.Module):
    """Multi-head attention with queries from x and keys/values from ctx."""

    def __init__(self, dim, ctx_dim, num_heads):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(ctx_dim, dim)
        self.v_proj = nn.Linear(ctx_dim, dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, ctx):
        t, d = x.shape
        s = ctx.shape[0]
        hd = d // self.num_heads
        q = self.q_proj(x).reshape(t, self.num_heads, hd).transpose(0, 1)
        k = self.k_proj(ctx).reshape(s, self.num_heads, hd).transpose(0, 1)
        v = self.v_proj(ctx).reshape(s, self.num_heads, hd).transpose(0, 1)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(t, d)
        return self.proj(out)


class EncoderBlock(nn.Module):
    """Standard pre-norm ViT block: self-attention then MLP, both residual."""

    def __init__(self, dim, num_heads, mlp_ratio=4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * mlp_ratio)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class LiftDecoderLayer(nn.Module):
    """One 3D decoder layer: F = F_prev + MLP(F_prev + ATTN(F_prev, ctx)).

    A single residual wraps the MLP whose input already carries the attention
    update; there is no attention among the 3D tokens, so every token's output
    depends only on itself and the shared context.  Attention and MLP inputs
    are pre-normalized; output projections are zero-initialized so the layer
    is the identity at initialization.
    """

    def __init__(self, dim, ctx_dim, num_heads, mlp_ratio=4):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.norm_ctx = nn.LayerNorm(ctx_dim)
        self.attn = CrossAttention(dim, ctx_dim, num_heads)
        mark_zero_init(self.attn.proj)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * mlp_ratio)
        mark_zero_init(self.mlp.fc2)

    def forward(self, x, ctx, enable_attention=True):
        if enable_attention:
            a = self.attn(self.norm_q(x), self.norm_ctx(ctx))
        else:
            a = torch.zeros_like(x)
        return x + self.mlp(self.norm_mlp(x + a))


def patchify(image, patch_size):
    """(S, S, C) image to (grid*grid, patch_size*patch_size*C) row-major tokens."""
    s, _, c = image.shape
    grid = s // patch_size
    x = image.reshape(grid, patch_size, grid, patch_size, c)
    return x.permute(0, 2, 1, 3, 4).reshape(grid * grid, patch_size * patch_size * c)


def to_model_dtype(module):
    return module.to(DTYPE)
