"""Base64-PNG wire codecs for the HTTP API."""

import base64
import io

import numpy as np
from PIL import Image

from ..edit_encoder import SegmentationMap
from ..errors import InvalidArgumentError


def image_to_b64(image):
    """Float array in [0, 1], (H, W, 3) or (H, W), to a base64 PNG string."""
    arr = np.asarray(image, dtype=np.float64)
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(data, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def b64_to_image(payload, field="image"):
    try:
        raw = base64.b64decode(payload, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise InvalidArgumentError(f"{field} is not a decodable base64 PNG") from exc
    return rgb


def b64_to_mask(payload, field="mask"):
    try:
        raw = base64.b64decode(payload, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            gray = np.asarray(img.convert("L"))
    except Exception as exc:
        raise InvalidArgumentError(f"{field} is not a decodable base64 PNG") from exc
    return gray >= 128


def seg_to_b64(seg):
    """Class-index PNG: single 8-bit channel holding raw class ids."""
    buf = io.BytesIO()
    Image.fromarray(seg.classes.astype(np.uint8), mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def b64_to_seg(payload, field="seg_map"):
    try:
        raw = base64.b64decode(payload, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            classes = np.asarray(img.convert("L"), dtype=np.int64)
    except Exception as exc:
        raise InvalidArgumentError(f"{field} is not a decodable base64 PNG") from exc
    return SegmentationMap(classes)
