"""Differentiable gaussian rasterization.

The torch front-end handles everything per-gaussian (quaternion to rotation,
3D covariance, camera transform, perspective Jacobian, 2D covariance with the
0.3-pixel dilation, analytic 2x2 inversion, depth sort) so autograd covers
those stages; the per-pixel compositing runs in a flat kernel wrapped in an
autograd.Function with a hand-derived backward.

Two operating modes:
  exact=True   no culling, alpha_min = 0, infinite footprint radii.  Smooth
               almost everywhere, used by the gradient checks.
  exact=False  footprint radii bound the region where alpha >= alpha_min and
               contributions below alpha_min are skipped; much faster and the
               default for training and rendering.

Compositing is front to back with alpha clamped to 0.999; depth ties keep
ascending input order.  The alpha map is 1 - T_final and the depth map is the
expectation of camera depth under the same compositing weights (no
normalization, background contributes depth 0).
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import InvalidArgumentError
from ..geometry import Camera, DTYPE, GaussianCloud
from . import _backend

ALPHA_LIMIT = 0.999
DEFAULT_ALPHA_MIN = 1e-5
CONDITION_LIMIT = 1e12
DILATION = 0.3


@dataclass
class RenderOutput:
    """Rendered maps plus per-call diagnostics."""

    image: torch.Tensor
    alpha: torch.Tensor
    depth: torch.Tensor
    skipped_near: int = 0
    skipped_singular: int = 0
    clamped_gaussians: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def clamp_total(self):
        return int(self.clamped_gaussians.sum())

    def image_numpy(self):
        return self.image.detach().cpu().numpy()


def _quat_to_rotmat(quat):
    """Rows of unit quaternions (w, x, y, z) to rotation matrices, batched."""
    w, x, y, z = quat.unbind(-1)
    return torch.stack([
        torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


class _Composite(torch.autograd.Function):
    @staticmethod
    def forward(ctx, means2d, inv_cov, opacity, color, depth, radius,
                height, width, background, alpha_min):
        args = [t.detach().cpu().contiguous().numpy().astype(np.float64)
                for t in (means2d, inv_cov, opacity, color, depth)]
        image, alpha_map, depth_map, t_final, clamp_count = _backend.composite_forward(
            args[0], args[1], args[2], args[3], args[4], radius,
            height, width, background, ALPHA_LIMIT, alpha_min)
        ctx.inputs = args
        ctx.radius = radius
        ctx.shape = (height, width)
        ctx.background = background
        ctx.alpha_min = alpha_min
        ctx.outputs = (image, depth_map, t_final)
        out_image = torch.from_numpy(image).to(DTYPE)
        out_alpha = torch.from_numpy(alpha_map).to(DTYPE)
        out_depth = torch.from_numpy(depth_map).to(DTYPE)
        out_clamp = torch.from_numpy(clamp_count)
        ctx.mark_non_differentiable(out_clamp)
        return out_image, out_alpha, out_depth, out_clamp

    @staticmethod
    def backward(ctx, grad_image, grad_alpha, grad_depth, _grad_clamp):
        height, width = ctx.shape

        def as_np(g, shape):
            if g is None:
                return np.zeros(shape)
            return g.detach().cpu().contiguous().numpy().astype(np.float64)

        gi = as_np(grad_image, (height, width, 3))
        ga = as_np(grad_alpha, (height, width))
        gd = as_np(grad_depth, (height, width))
        means, inv_cov, opacity, color, depth = ctx.inputs
        image, depth_map, t_final = ctx.outputs
        g_means, g_inv, g_opacity, g_color, g_depthv = _backend.composite_backward(
            means, inv_cov, opacity, color, depth, ctx.radius,
            height, width, ctx.background, ALPHA_LIMIT, ctx.alpha_min,
            image, depth_map, t_final, gi, ga, gd)
        to_t = lambda a: torch.from_numpy(a).to(DTYPE)
        return (to_t(g_means), to_t(g_inv), to_t(g_opacity), to_t(g_color),
                to_t(g_depthv), None, None, None, None, None)


def rasterize(cloud, camera, background=(1.0, 1.0, 1.0), exact=False,
              alpha_min=DEFAULT_ALPHA_MIN):
    """Render a GaussianCloud through a Camera.

    background is an RGB triple in [0, 1]; pixels with zero accumulated alpha
    reproduce it exactly.  Gradients flow to every cloud attribute (quaternions
    are normalized internally, so off-unit inputs are handled smoothly).
    """
    if not isinstance(cloud, GaussianCloud):
        raise InvalidArgumentError("cloud must be a GaussianCloud")
    if not isinstance(camera, Camera):
        raise InvalidArgumentError("camera must be a Camera")
    bg = np.asarray(background, dtype=np.float64).reshape(-1)
    if bg.shape[0] != 3 or np.any(bg < 0.0) or np.any(bg > 1.0):
        raise InvalidArgumentError("background must be three values in [0, 1]")
    if exact:
        alpha_min = 0.0
    elif not 0.0 <= alpha_min < 1.0:
        raise InvalidArgumentError("alpha_min must be in [0, 1)")

    height, width = camera.height, camera.width
    n = cloud.positions.shape[0]
    if n == 0:
        image = torch.from_numpy(np.broadcast_to(bg, (height, width, 3)).copy()).to(DTYPE)
        zeros = torch.zeros(height, width, dtype=DTYPE)
        return RenderOutput(image, zeros, zeros.clone())

    rot = torch.as_tensor(camera.rotation, dtype=DTYPE)
    tvec = torch.as_tensor(camera.translation, dtype=DTYPE)
    pos_cam = cloud.positions @ rot.T + tvec
    z = pos_cam[:, 2]

    front = z > camera.near
    skipped_near = int(n - int(front.sum()))

    norms = torch.linalg.norm(cloud.rotations, dim=1, keepdim=True)
    quat = cloud.rotations / torch.clamp(norms, min=1e-12)
    rmat = _quat_to_rotmat(quat)
    ms = rmat * cloud.scales[:, None, :]
    cov3 = ms @ ms.transpose(1, 2)
    cov_cam = rot @ cov3 @ rot.T

    fx, fy = camera.fx, camera.fy
    zc = torch.clamp(z, min=camera.near * 0.5)
    x, y = pos_cam[:, 0], pos_cam[:, 1]
    zeros = torch.zeros_like(zc)
    jac = torch.stack([
        torch.stack([fx / zc, zeros, -fx * x / zc ** 2], -1),
        torch.stack([zeros, fy / zc, -fy * y / zc ** 2], -1),
    ], -2)
    cov2 = jac @ cov_cam @ jac.transpose(1, 2)
    a2 = cov2[:, 0, 0] + DILATION
    b2 = cov2[:, 0, 1]
    c2 = cov2[:, 1, 1] + DILATION

    det = a2 * c2 - b2 * b2

    with torch.no_grad():
        half_tr = 0.5 * (a2 + c2)
        disc = torch.sqrt(torch.clamp(half_tr ** 2 - det, min=0.0))
        lam_max = half_tr + disc
        lam_min = half_tr - disc
        finite = (torch.isfinite(det) & torch.isfinite(lam_max)
                  & torch.isfinite(pos_cam).all(dim=1))
        well_cond = (lam_min > 0) & (lam_max <= CONDITION_LIMIT * lam_min) & (det > 0)
        usable = front & finite & well_cond
        skipped_singular = int((front & ~(finite & well_cond)).sum())

    if int(usable.sum()) == 0:
        image = torch.from_numpy(np.broadcast_to(bg, (height, width, 3)).copy()).to(DTYPE)
        zmap = torch.zeros(height, width, dtype=DTYPE)
        # Keep the graph connected so backward yields zero grads, not errors.
        anchor = 0.0 * (cloud.positions.sum() + cloud.scales.sum()
                        + cloud.rotations.sum() + cloud.opacities.sum()
                        + cloud.colors.sum())
        return RenderOutput(image + anchor, zmap + anchor, zmap.clone() + anchor,
                            skipped_near, skipped_singular,
                            np.zeros(n, dtype=np.int64))

    keep = torch.nonzero(usable, as_tuple=False).squeeze(1)
    det_k = det[keep]
    inv_cov = torch.stack([c2[keep] / det_k, -b2[keep] / det_k, a2[keep] / det_k], -1)
    u = fx * x[keep] / zc[keep] + camera.cx
    v = fy * y[keep] / zc[keep] + camera.cy
    means2d = torch.stack([u, v], -1)
    z_k = z[keep]
    opac_k = cloud.opacities[keep]
    col_k = cloud.colors[keep]

    if exact:
        radius = np.full(int(keep.shape[0]), np.inf)
    else:
        with torch.no_grad():
            qmax = 2.0 * torch.log(torch.clamp(opac_k / max(alpha_min, 1e-300), min=1e-300))
            r = torch.sqrt(torch.clamp(qmax, min=0.0) * lam_max[keep])
            radius = (r.cpu().numpy() * (1.0 + 1e-12) + 1e-9)
            radius[np.asarray(qmax.cpu()) <= 0.0] = 0.0

    order = torch.argsort(z_k, stable=True)
    order_np = order.cpu().numpy()
    image, alpha_map, depth_map, clamp_sorted = _Composite.apply(
        means2d[order], inv_cov[order], opac_k[order], col_k[order], z_k[order],
        radius[order_np], height, width, bg, alpha_min)

    clamped = np.zeros(n, dtype=np.int64)
    clamped[keep.cpu().numpy()[order_np]] = clamp_sorted.numpy()
    return RenderOutput(image, alpha_map, depth_map,
                        skipped_near, skipped_singular, clamped)
