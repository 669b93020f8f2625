"""HTTP service exposing reconstruction, editing, and rendering."""

from importlib import resources

from .app import StubSegmenter, app_from_checkpoints, create_app
from .codec import (b64_to_image, b64_to_mask, b64_to_seg, image_to_b64,
                    seg_to_b64)
from .store import DEFAULT_CAPACITY, Session, SessionStore


def load_schema(name):
    """Read one of the shipped endpoint JSON schemas by stem name."""
    import json
    ref = resources.files(__package__) / "schemas" / f"{name}.json"
    return json.loads(ref.read_text())


__all__ = [
    "DEFAULT_CAPACITY", "Session", "SessionStore", "StubSegmenter",
    "app_from_checkpoints", "b64_to_image", "b64_to_mask", "b64_to_seg",
    "create_app", "image_to_b64", "load_schema", "seg_to_b64",
]
