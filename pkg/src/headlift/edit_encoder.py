"""Editing-model encoder: a ViT over 19-channel segmentation maps plus one
appended global style token from a frozen embedder.

The segmentation tokens are a function of the segmentation map only and the
style token of the style embedding only; they first meet inside the encoder
blocks' self-attention.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from .blocks import EncoderBlock, deterministic_init, patchify
from .errors import ConfigurationError, InvalidArgumentError
from .geometry import DTYPE
from .lift_encoder import FeatureTokens

NUM_CLASSES = 19
STYLE_DIM = 128
STYLE_COORD = (-1, -1)  # sentinel grid coordinate of the style token

# Face-parsing taxonomy, frozen for reproducibility: index -> (name, display RGB).
PALETTE = (
    ("background", (0, 0, 0)),
    ("skin", (255, 204, 153)),
    ("left_brow", (153, 102, 51)),
    ("right_brow", (153, 102, 52)),
    ("left_eye", (51, 153, 255)),
    ("right_eye", (51, 153, 254)),
    ("eyeglasses", (204, 204, 204)),
    ("left_ear", (255, 153, 153)),
    ("right_ear", (255, 153, 154)),
    ("earring", (255, 255, 102)),
    ("nose", (255, 153, 51)),
    ("mouth_interior", (153, 0, 0)),
    ("upper_lip", (255, 102, 102)),
    ("lower_lip", (255, 51, 51)),
    ("neck", (255, 179, 128)),
    ("necklace", (204, 255, 102)),
    ("cloth", (102, 102, 153)),
    ("hair", (77, 51, 26)),
    ("hat", (102, 153, 102)),
)


@dataclass(frozen=True)
class SegmentationMap:
    """Per-pixel class indices over the frozen 19-class palette."""

    classes: np.ndarray  # (S, S) integers in [0, NUM_CLASSES)

    def __post_init__(self):
        arr = np.asarray(self.classes)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InvalidArgumentError(f"classes must be square (S, S), got {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise InvalidArgumentError("classes must be integers")
        if arr.min() < 0 or arr.max() >= NUM_CLASSES:
            raise InvalidArgumentError(
                f"class indices must lie in [0, {NUM_CLASSES}), "
                f"got range [{arr.min()}, {arr.max()}]")
        object.__setattr__(self, "classes", arr.astype(np.int64))

    @property
    def size(self):
        return self.classes.shape[0]

    @property
    def one_hot(self):
        """(S, S, 19) float one-hot planes."""
        eye = np.eye(NUM_CLASSES)
        return eye[self.classes]

    def one_hot_torch(self):
        return torch.from_numpy(self.one_hot).to(DTYPE)


def save_segmentation_png(seg, path):
    Image.fromarray(seg.classes.astype(np.uint8), mode="L").save(path, format="PNG")


def load_segmentation_png(path):
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.int64)
    return SegmentationMap(arr)


def palette_json():
    return json.dumps({str(i): {"name": name, "rgb": list(rgb)}
                       for i, (name, rgb) in enumerate(PALETTE)}, indent=2)


@dataclass(frozen=True)
class StyleEmbedding:
    """L2-normalized global appearance vector from a frozen embedder."""

    vector: torch.Tensor  # (D_style,)
    source: str  # "image" or "text"
    descriptor: str = ""

    def __post_init__(self):
        v = self.vector
        if not isinstance(v, torch.Tensor):
            v = torch.as_tensor(np.asarray(v), dtype=DTYPE)
            object.__setattr__(self, "vector", v)
        if v.ndim != 1:
            raise InvalidArgumentError("style vector must be one-dimensional")
        if self.source not in ("image", "text"):
            raise InvalidArgumentError(f"unknown style source {self.source!r}")
        norm = float(torch.linalg.norm(v))
        if abs(norm - 1.0) > 1e-5:
            raise InvalidArgumentError(f"style vector norm {norm} is not 1 within 1e-5")


class BuiltinStyleEmbedder:
    """Deterministic dependency-free stand-in for a dual-tower embedder.

    Images route through fixed random projections of low-resolution pixel
    statistics; text routes through a byte-hash-seeded draw.  Both land in the
    same D_style space and are frozen by construction.
    """

    has_text_tower = True

    def __init__(self, dim=STYLE_DIM, seed=0):
        self.dim = dim
        rng = np.random.default_rng(seed)
        self._image_proj = rng.standard_normal((dim, 8 * 8 * 3 + 6)) / np.sqrt(dim)

    def embed_image(self, image):
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvalidArgumentError(f"expected (H, W, 3) image, got {arr.shape}")
        t = torch.from_numpy(arr).permute(2, 0, 1)[None]
        small = torch.nn.functional.adaptive_avg_pool2d(t, (8, 8))[0].numpy()
        stats = np.concatenate([small.reshape(-1),
                                arr.mean(axis=(0, 1)), arr.std(axis=(0, 1))])
        return self._image_proj @ stats

    def embed_text(self, prompt):
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        return np.random.default_rng(seed).standard_normal(self.dim)


def embed_style(source, embedder=None):
    """Embed an image array or a text prompt into a StyleEmbedding."""
    embedder = embedder or BuiltinStyleEmbedder()
    if isinstance(source, str):
        if not getattr(embedder, "has_text_tower", False):
            raise ConfigurationError("configured embedder has no text tower")
        raw, kind, descriptor = embedder.embed_text(source), "text", source
    else:
        raw, kind, descriptor = embedder.embed_image(source), "image", ""
    vec = torch.as_tensor(np.asarray(raw), dtype=DTYPE)
    norm = torch.linalg.norm(vec)
    if float(norm) < 1e-12:
        raise InvalidArgumentError("embedder produced a zero style vector")
    return StyleEmbedding(vec / norm, kind, descriptor)


@dataclass(frozen=True)
class EditEncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    dim: int = 256  # decoder width D
    enc_dim: int = 128
    enc_blocks: int = 4
    enc_heads: int = 4
    style_dim: int = STYLE_DIM

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise InvalidArgumentError("image_size must be divisible by patch_size")

    @property
    def grid(self):
        return self.image_size // self.patch_size


class EditEncoder(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        cfg = config or EditEncoderConfig()
        self.config = cfg
        p = cfg.patch_size
        self.patch_embed = nn.Linear(NUM_CLASSES * p * p, cfg.enc_dim)
        self.style_embed = nn.Linear(cfg.style_dim, cfg.enc_dim)
        self.pos_embed = nn.Parameter(torch.zeros(cfg.grid * cfg.grid, cfg.enc_dim))
        self.style_pos = nn.Parameter(torch.zeros(cfg.enc_dim))
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.enc_dim, cfg.enc_heads) for _ in range(cfg.enc_blocks))
        self.norm = nn.LayerNorm(cfg.enc_dim)
        self.out_proj = nn.Linear(cfg.enc_dim, cfg.dim)
        self.to(DTYPE)

    def init_weights(self, seed):
        deterministic_init(self, seed)
        return self

    def input_tokens(self, seg, style):
        """Token sequence before block 1: grid tokens then the style token."""
        if seg.size != self.config.image_size:
            raise InvalidArgumentError(
                f"segmentation size {seg.size} != configured {self.config.image_size}")
        planes = patchify(seg.one_hot_torch(), self.config.patch_size)
        seg_tokens = self.patch_embed(planes) + self.pos_embed
        style_token = self.style_embed(style.vector.to(DTYPE)) + self.style_pos
        return torch.cat([seg_tokens, style_token[None]], dim=0)

    def forward(self, seg, style):
        tokens = self.input_tokens(seg, style)
        for block in self.blocks:
            tokens = block(tokens)
        tokens = self.out_proj(self.norm(tokens))
        grid = self.config.grid
        coords = tuple((r, c) for r in range(grid) for c in range(grid)) + (STYLE_COORD,)
        return FeatureTokens(tokens, coords, "edit")

    encode_edit = forward
