"""Frozen perception backbones.

Two builtin families ship with the package so nothing has to be downloaded: a
small ViT whose intermediate blocks provide semantic multi-layer taps, and a
small strided conv net whose final feature map provides a single
segmentation-flavored tap.  Both draw their (never-trained) weights from a
fixed-seed initializer; an adapter loads external checkpoints with the same
tensor names when real pretrained weights are available.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .blocks import EncoderBlock, deterministic_init, mark_frozen, patchify
from .errors import ConfigurationError, InvalidArgumentError
from .geometry import DTYPE

TINY_VIT_DEPTH = 8
DEFAULT_VIT_TAPS = (1, 3, 5, 7)


@dataclass(frozen=True)
class BackboneConfig:
    name: str  # "tiny_vit" or "tiny_conv"
    tap_layers: tuple = DEFAULT_VIT_TAPS
    feature_dim: int = 64
    weights_source: str = "builtin_deterministic"
    seed: int = 0
    checkpoint_path: str = None

    def __post_init__(self):
        object.__setattr__(self, "tap_layers", tuple(int(t) for t in self.tap_layers))
        if self.name not in ("tiny_vit", "tiny_conv"):
            raise ConfigurationError(f"unknown backbone {self.name!r}")
        if any(b <= a for a, b in zip(self.tap_layers, self.tap_layers[1:])):
            raise ConfigurationError("tap_layers must be strictly increasing")
        if not self.tap_layers:
            raise ConfigurationError("tap_layers must be nonempty")
        if self.weights_source not in ("builtin_deterministic", "external_checkpoint"):
            raise ConfigurationError(f"unknown weights_source {self.weights_source!r}")
        if self.weights_source == "external_checkpoint" and not self.checkpoint_path:
            raise ConfigurationError("external_checkpoint requires checkpoint_path")


class TinyViT(nn.Module):
    """Plain ViT over non-overlapping patches; no cls token, so every tap is
    one token per patch in row-major grid order."""

    def __init__(self, image_size, patch_size, width, depth=TINY_VIT_DEPTH, num_heads=4):
        super().__init__()
        if image_size % patch_size:
            raise InvalidArgumentError(
                f"image size {image_size} not divisible by patch {patch_size}")
        self.patch_size = patch_size
        self.grid = image_size // patch_size
        self.depth = depth
        self.patch_embed = nn.Linear(3 * patch_size * patch_size, width)
        self.pos_embed = nn.Parameter(torch.zeros(self.grid * self.grid, width))
        self.blocks = nn.ModuleList(EncoderBlock(width, num_heads) for _ in range(depth))

    def forward_taps(self, image, tap_layers):
        tokens = self.patch_embed(patchify(image, self.patch_size)) + self.pos_embed
        taps = {}
        want = set(tap_layers)
        for i, block in enumerate(self.blocks):
            tokens = block(tokens)
            if i in want:
                taps[i] = tokens
        return [taps[i] for i in tap_layers]


class TinyConv(nn.Module):
    """Strided conv encoder downsampling to the patch grid; one final tap."""

    def __init__(self, image_size, patch_size, width):
        super().__init__()
        stages = int(np.log2(patch_size))
        if 2 ** stages != patch_size:
            raise InvalidArgumentError(f"patch size {patch_size} must be a power of two")
        if image_size % patch_size:
            raise InvalidArgumentError(
                f"image size {image_size} not divisible by patch {patch_size}")
        self.grid = image_size // patch_size
        self.depth = 1
        layers = []
        chans = 3
        for s in range(stages):
            out = min(width, 16 * 2 ** s)
            layers += [nn.Conv2d(chans, out, 3, stride=2, padding=1), nn.GELU()]
            chans = out
        layers.append(nn.Conv2d(chans, width, 1))
        self.net = nn.Sequential(*layers)

    def forward_taps(self, image, tap_layers):
        if tuple(tap_layers) != (0,):
            raise ConfigurationError("tiny_conv exposes a single tap layer, index 0")
        x = image.permute(2, 0, 1)[None]
        feat = self.net(x)[0]  # (width, grid, grid)
        tokens = feat.permute(1, 2, 0).reshape(self.grid * self.grid, -1)
        return [tokens]


def load_external_checkpoint(module, path):
    """Load an .npz name->array archive into module, validating every tensor."""
    try:
        archive = np.load(path)
    except OSError as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
    state = module.state_dict()
    loaded = {}
    for name, tensor in state.items():
        if name not in archive:
            raise ConfigurationError(f"checkpoint {path} is missing tensor {name!r}")
        arr = archive[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise ConfigurationError(
                f"checkpoint tensor {name!r} has shape {tuple(arr.shape)}, "
                f"expected {tuple(tensor.shape)}")
        loaded[name] = torch.from_numpy(arr).to(tensor.dtype)
    module.load_state_dict(loaded)
    return module


class FrozenBackbone(nn.Module):
    """A perception net with frozen weights and tap-layer feature extraction."""

    def __init__(self, config, image_size, patch_size):
        super().__init__()
        self.config = config
        if config.name == "tiny_vit":
            net = TinyViT(image_size, patch_size, config.feature_dim)
        else:
            net = TinyConv(image_size, patch_size, config.feature_dim)
        for tap in config.tap_layers:
            if not 0 <= tap < net.depth:
                raise ConfigurationError(
                    f"tap layer {tap} outside backbone depth {net.depth}")
        net = net.to(DTYPE)
        if config.weights_source == "builtin_deterministic":
            deterministic_init(net, config.seed)
        else:
            load_external_checkpoint(net, config.checkpoint_path)
        self.net = net
        self.requires_grad_(False)
        self.eval()
        mark_frozen(self)

    @property
    def num_taps(self):
        return len(self.config.tap_layers)

    def forward(self, image):
        """image: (S, S, 3) in [0, 1] -> list of (tokens, feature_dim) tensors."""
        return self.net.forward_taps(image.to(DTYPE), self.config.tap_layers)
