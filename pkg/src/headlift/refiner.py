"""Shallow residual CNN that sharpens rasterized images in phase 2."""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .blocks import deterministic_init, mark_zero_init
from .errors import InvalidArgumentError
from .geometry import DTYPE


@dataclass(frozen=True)
class RefinerConfig:
    channels: int = 64
    blocks: int = 4
    residual: bool = True

    def __post_init__(self):
        if self.channels < 1 or self.blocks < 1:
            raise InvalidArgumentError("channels and blocks must be >= 1")


class _ResBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.GELU()
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class Refiner(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        cfg = config or RefinerConfig()
        self.config = cfg
        self.stem = nn.Conv2d(3, cfg.channels, 3, padding=1)
        self.blocks = nn.Sequential(*(_ResBlock(cfg.channels) for _ in range(cfg.blocks)))
        self.head = nn.Conv2d(cfg.channels, 3, 3, padding=1)
        mark_zero_init(self.head)
        self.to(DTYPE)

    def init_weights(self, seed):
        deterministic_init(self, seed)
        return self

    def forward(self, image):
        """(H, W, 3) in [0, 1] -> refined (H, W, 3) in [0, 1]."""
        if image.ndim != 3 or image.shape[2] != 3:
            raise InvalidArgumentError(f"expected (H, W, 3) image, got {tuple(image.shape)}")
        x = image.to(DTYPE).permute(2, 0, 1)[None]
        delta = self.head(self.blocks(self.stem(x)))[0].permute(1, 2, 0)
        if self.config.residual:
            return torch.clamp(image + delta, 0.0, 1.0)
        return torch.clamp(delta, 0.0, 1.0)

    refine = forward
