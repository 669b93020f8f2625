"""Image and float-map file I/O.

PNG color images use naive 8-bit scaling, round(255 * v) per channel; masks
are single-channel PNGs with 0 = background and 255 = foreground.  Exact
float maps use a little-endian binary layout: three uint32 (height, width,
channels) followed by height*width*channels float32 values, row-major.
"""

import numpy as np
import torch
from PIL import Image

from .errors import InvalidArgumentError


def _to_numpy(image):
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    return np.asarray(image)


def save_image_png(image, path):
    arr = _to_numpy(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidArgumentError(f"expected (H, W, 3) image, got {arr.shape}")
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def load_image_png(path):
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_mask_png(mask, path):
    arr = _to_numpy(mask)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"expected (H, W) mask, got {arr.shape}")
    data = np.where(arr.astype(bool), 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def load_mask_png(path):
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr >= 128


def save_float_map(array, path):
    arr = _to_numpy(array).astype(np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise InvalidArgumentError(f"expected (H, W) or (H, W, C) array, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        fh.write(arr.astype("<f4").tobytes())


def load_float_map(path):
    with open(path, "rb") as fh:
        dims = np.frombuffer(fh.read(12), dtype="<u4")
        h, w, c = (int(d) for d in dims)
        data = np.frombuffer(fh.read(4 * h * w * c), dtype="<f4")
    if data.size != h * w * c:
        raise InvalidArgumentError(f"truncated float map in {path}")
    out = data.astype(np.float64).reshape(h, w, c)
    return out[:, :, 0] if c == 1 else out
