"""Kernel backend selection.

The compiled Cython extension is preferred when importable; the numpy
reference implementation is the fallback.  HEADLIFT_SPLAT_BACKEND forces one
of "compiled" or "reference" and raises if the forced backend is unavailable.
"""

import os

from ..errors import ConfigurationError
from . import _reference

_FORCED = os.environ.get("HEADLIFT_SPLAT_BACKEND", "").strip().lower()

if _FORCED not in ("", "compiled", "reference"):
    raise ConfigurationError(
        f"HEADLIFT_SPLAT_BACKEND must be 'compiled' or 'reference', got {_FORCED!r}")

_compiled = None
if _FORCED != "reference":
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
        if _FORCED == "compiled":
            raise ConfigurationError(
                "HEADLIFT_SPLAT_BACKEND=compiled but the extension module "
                "headlift.splat._kernels is not importable")

if _compiled is not None:
    BACKEND_NAME = "compiled"
    composite_forward = _compiled.composite_forward
    composite_backward = _compiled.composite_backward
else:
    BACKEND_NAME = "reference"
    composite_forward = _reference.composite_forward
    composite_backward = _reference.composite_backward


def active_backend():
    return BACKEND_NAME
