"""Finite-difference verification of rasterizer gradients.

Renders in exact mode (no footprint culling, alpha_min = 0) so the forward
map is smooth except at the 0.999 alpha clamp; gaussians that hit the clamp
anywhere in the image are excluded from the comparison and reported, since
the subgradient there legitimately disagrees with central differences.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import InvalidArgumentError
from ..geometry import Camera, DTYPE, GaussianCloud
from .rasterize import rasterize

ATTRIBUTES = ("positions", "scales", "rotations", "opacities", "colors")


@dataclass
class GradCheckResult:
    max_relative_error: float
    per_attribute: dict
    num_checked: int
    excluded_gaussians: list = field(default_factory=list)
    nan_params: list = field(default_factory=list)

    @property
    def passed(self):
        return math.isfinite(self.max_relative_error) and not self.nan_params

    def __float__(self):
        return float(self.max_relative_error)


def _loss_value(loss, image):
    value = loss(image)
    if isinstance(value, torch.Tensor):
        return value
    return torch.as_tensor(float(value), dtype=DTYPE)


def check_gradients(cloud, camera, background=(1.0, 1.0, 1.0), loss=None,
                    eps=1e-4, denom_floor=1e-8):
    """Compare analytic gradients of loss(rendered image) against central
    differences for every gaussian attribute.

    Restricted to small scenes (at most 64 gaussians, at most 32x32 pixels) to
    keep the finite-difference sweep tractable.  loss maps an (H, W, 3) image
    tensor to a scalar; the default is the mean of the image.
    """
    if not isinstance(cloud, GaussianCloud) or not isinstance(camera, Camera):
        raise InvalidArgumentError("check_gradients needs a GaussianCloud and a Camera")
    n = cloud.positions.shape[0]
    if n == 0 or n > 64:
        raise InvalidArgumentError("check_gradients supports 1..64 gaussians")
    if camera.width > 32 or camera.height > 32:
        raise InvalidArgumentError("check_gradients supports images up to 32x32")
    if loss is None:
        loss = lambda image: image.mean()

    leaves = {name: getattr(cloud, name).detach().clone().requires_grad_(True)
              for name in ATTRIBUTES}
    live = GaussianCloud(**leaves)
    out = rasterize(live, camera, background, exact=True)
    _loss_value(loss, out.image).backward()

    analytic = {}
    for name in ATTRIBUTES:
        grad = leaves[name].grad
        analytic[name] = (np.zeros(leaves[name].shape) if grad is None
                          else grad.detach().numpy().copy())

    excluded = [int(i) for i in np.nonzero(out.clamped_gaussians > 0)[0]]
    excluded_set = set(excluded)

    base = {name: getattr(cloud, name).detach().numpy().copy() for name in ATTRIBUTES}

    def render_loss(arrays):
        probe = GaussianCloud(**{k: torch.from_numpy(v.copy()).to(DTYPE)
                                 for k, v in arrays.items()})
        with torch.no_grad():
            image = rasterize(probe, camera, background, exact=True).image
            return float(_loss_value(loss, image))

    per_attribute = {name: 0.0 for name in ATTRIBUTES}
    nan_params = []
    worst = 0.0
    checked = 0
    for name in ATTRIBUTES:
        arr = base[name]
        flat_view = arr.reshape(arr.shape[0], -1)
        for gi in range(arr.shape[0]):
            if gi in excluded_set:
                continue
            for k in range(flat_view.shape[1]):
                plus = {key: val for key, val in base.items()}
                plus[name] = arr.copy()
                plus[name].reshape(arr.shape[0], -1)[gi, k] += eps
                minus = {key: val for key, val in base.items()}
                minus[name] = arr.copy()
                minus[name].reshape(arr.shape[0], -1)[gi, k] -= eps
                numeric = (render_loss(plus) - render_loss(minus)) / (2.0 * eps)
                a = float(analytic[name].reshape(arr.shape[0], -1)[gi, k])
                label = f"{name}[{gi},{k}]"
                if not (math.isfinite(a) and math.isfinite(numeric)):
                    nan_params.append(label)
                    continue
                denom = abs(a) + abs(numeric)
                checked += 1
                if denom <= denom_floor:
                    continue
                rel = abs(a - numeric) / denom
                per_attribute[name] = max(per_attribute[name], rel)
                worst = max(worst, rel)

    if nan_params:
        worst = float("inf")
    return GradCheckResult(worst, per_attribute, checked, excluded, nan_params)
