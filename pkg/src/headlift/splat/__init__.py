"""Gaussian splat rendering with interchangeable compositing kernels."""

from ._backend import active_backend, composite_backward, composite_forward
from .gradcheck import GradCheckResult, check_gradients
from .rasterize import (ALPHA_LIMIT, CONDITION_LIMIT, DEFAULT_ALPHA_MIN,
                        DILATION, RenderOutput, rasterize)

__all__ = [
    "ALPHA_LIMIT", "CONDITION_LIMIT", "DEFAULT_ALPHA_MIN", "DILATION",
    "GradCheckResult", "RenderOutput", "active_backend",
    "check_gradients", "composite_backward", "composite_forward", "rasterize",
]
