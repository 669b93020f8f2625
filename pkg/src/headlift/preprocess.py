"""Input alignment and foreground patch selection.

Stands in for an external tracking and matting front end: images are
center-cropped to a square, resized to the working resolution, and masked so
that every background pixel equals the configured background color exactly.
When no mask is provided one is keyed from the background color with a
per-channel threshold; with the default white background this makes prepare
idempotent on its own output.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidArgumentError
from .geometry import DTYPE

DEFAULT_SIZE = 256
DEFAULT_BACKGROUND = (1.0, 1.0, 1.0)
DEFAULT_KEY_THRESHOLD = 0.04
DEFAULT_PATCH_SIZE = 16


@dataclass(frozen=True)
class AlignedImage:
    """Square background-free image with its foreground mask."""

    pixels: np.ndarray  # (S, S, 3) in [0, 1]
    mask: np.ndarray  # (S, S) bool, true = foreground
    source_id: str = ""
    background: tuple = DEFAULT_BACKGROUND

    def __post_init__(self):
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=np.float64))
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        s = self.pixels.shape[0]
        if self.pixels.shape != (s, s, 3):
            raise InvalidArgumentError(f"pixels must be square (S, S, 3), got {self.pixels.shape}")
        if self.mask.shape != (s, s):
            raise InvalidArgumentError(f"mask shape {self.mask.shape} does not match pixels")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise InvalidArgumentError("pixels must lie in [0, 1]")
        bg = np.asarray(self.background, dtype=np.float64)
        if not (self.pixels[~self.mask] == bg).all():
            raise InvalidArgumentError("background pixels must equal the background color exactly")

    @property
    def size(self):
        return self.pixels.shape[0]

    def pixels_torch(self):
        return torch.from_numpy(self.pixels).to(DTYPE)


@dataclass(frozen=True)
class PatchSet:
    """Row-major list of patch grid coordinates that contain foreground."""

    patch_size: int
    kept: tuple  # ((row, col), ...) sorted row-major, duplicate-free
    total: int

    def __post_init__(self):
        object.__setattr__(self, "kept", tuple((int(r), int(c)) for r, c in self.kept))
        if len(set(self.kept)) != len(self.kept):
            raise InvalidArgumentError("kept patches must be duplicate-free")
        if list(self.kept) != sorted(self.kept):
            raise InvalidArgumentError("kept patches must be sorted row-major")
        if len(self.kept) > self.total:
            raise InvalidArgumentError("kept cannot exceed the total patch count")

    def __len__(self):
        return len(self.kept)

    def flat_indices(self, grid):
        return np.array([r * grid + c for r, c in self.kept], dtype=np.int64)


def _center_crop(arr):
    h, w = arr.shape[:2]
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return arr[top:top + side, left:left + side]


def _resize_bilinear(pixels, size):
    if pixels.shape[0] == size:
        return pixels
    t = torch.from_numpy(pixels).permute(2, 0, 1)[None]
    out = torch.nn.functional.interpolate(t, size=(size, size), mode="bilinear",
                                          align_corners=False)
    return out[0].permute(1, 2, 0).clamp(0.0, 1.0).numpy()


def _resize_nearest_mask(mask, size):
    if mask.shape[0] == size:
        return mask
    t = torch.from_numpy(mask.astype(np.float64))[None, None]
    out = torch.nn.functional.interpolate(t, size=(size, size), mode="nearest")
    return out[0, 0].numpy() >= 0.5


def prepare(image, mask=None, size=DEFAULT_SIZE, background=DEFAULT_BACKGROUND,
            key_threshold=DEFAULT_KEY_THRESHOLD, source_id=""):
    """Center-crop, resize to size x size, and remove the background.

    image is any-size RGB with values in [0, 1] (uint8 accepted and scaled);
    mask, when given, must match the image shape and marks foreground.  When
    absent, pixels within key_threshold of the background color on every
    channel are keyed out.
    """
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    arr = arr.astype(np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InvalidArgumentError(f"image must be nonempty (H, W, 3), got {arr.shape}")
    if size < 1:
        raise InvalidArgumentError("size must be positive")

    if mask is not None:
        m = np.asarray(mask).astype(bool)
        if m.shape != arr.shape[:2]:
            raise InvalidArgumentError(
                f"mask shape {m.shape} does not match image {arr.shape[:2]}")
        m = _resize_nearest_mask(_center_crop(m), size)
    else:
        m = None

    pixels = _resize_bilinear(_center_crop(arr), size)
    if m is None:
        keyed = (np.abs(pixels - np.asarray(background)) <= key_threshold).all(axis=2)
        m = ~keyed
    out = pixels.copy()
    out[~m] = np.asarray(background, dtype=np.float64)
    return AlignedImage(out, m, source_id=source_id, background=tuple(background))


def select_foreground_patches(aligned, patch_size=DEFAULT_PATCH_SIZE):
    """Keep every patch containing at least one foreground pixel."""
    s = aligned.size
    if patch_size < 1 or s % patch_size != 0:
        raise InvalidArgumentError(
            f"image size {s} is not divisible by patch size {patch_size}")
    grid = s // patch_size
    blocks = aligned.mask.reshape(grid, patch_size, grid, patch_size)
    keep = blocks.any(axis=(1, 3))
    kept = tuple((int(r), int(c)) for r, c in np.argwhere(keep))
    return PatchSet(patch_size=patch_size, kept=kept, total=grid * grid)
