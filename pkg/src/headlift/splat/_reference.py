"""Pure-numpy compositing kernels, the fallback for the compiled extension.

Both backends implement the same contract.  Gaussians arrive already sorted
front-to-back; each one carries a pixel-space mean, the inverse 2D covariance
(a, b, c) of [[a, b], [b, c]], opacity, color, camera-space depth, and a
conservative footprint radius in pixels (inf means "touches every pixel").

Per pixel, contributions alpha = opacity * exp(-q/2) are clamped to
alpha_limit and composited front to back; alphas below alpha_min are skipped
entirely (with alpha_min = 0 nothing is skipped and the math is smooth, which
is what the finite-difference gradient checks rely on).

The backward pass walks gaussians in the same forward order, reconstructing
per-pixel suffix sums from the saved totals instead of dividing transmittance
back out, so it stays stable even when the final transmittance underflows.
"""

import numpy as np


def _bbox(u, v, r, height, width):
    """Inclusive pixel-index bounds of the footprint; pixel centers at +0.5."""
    if not np.isfinite(r):
        return 0, height - 1, 0, width - 1
    x0 = max(0, int(np.ceil(u - r - 0.5)))
    x1 = min(width - 1, int(np.floor(u + r - 0.5)))
    y0 = max(0, int(np.ceil(v - r - 0.5)))
    y1 = min(height - 1, int(np.floor(v + r - 0.5)))
    return y0, y1, x0, x1


def composite_forward(means, inv_cov, opacity, color, depth, radius,
                      height, width, background, alpha_limit, alpha_min):
    m = means.shape[0]
    image = np.zeros((height, width, 3))
    depth_map = np.zeros((height, width))
    trans = np.ones((height, width))
    clamp_count = np.zeros(m, dtype=np.int64)

    px = np.arange(width) + 0.5
    py = np.arange(height) + 0.5

    for i in range(m):
        y0, y1, x0, x1 = _bbox(means[i, 0], means[i, 1], radius[i], height, width)
        if y1 < y0 or x1 < x0:
            continue
        dx = px[x0:x1 + 1] - means[i, 0]
        dy = py[y0:y1 + 1] - means[i, 1]
        a, b, c = inv_cov[i]
        q = a * dx[None, :] ** 2 + 2.0 * b * dy[:, None] * dx[None, :] + c * dy[:, None] ** 2
        g = np.exp(-0.5 * q)
        raw = opacity[i] * g
        clamped = raw >= alpha_limit
        clamp_count[i] = int(clamped.sum())
        alpha = np.where(clamped, alpha_limit, raw)
        active = alpha >= alpha_min if alpha_min > 0.0 else np.ones_like(alpha, dtype=bool)
        sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        w = np.where(active, alpha * trans[sl], 0.0)
        image[sl] += w[:, :, None] * color[i]
        depth_map[sl] += w * depth[i]
        trans[sl] *= np.where(active, 1.0 - alpha, 1.0)

    image += trans[:, :, None] * np.asarray(background)
    alpha_map = 1.0 - trans
    return image, alpha_map, depth_map, trans, clamp_count


def composite_backward(means, inv_cov, opacity, color, depth, radius,
                       height, width, background, alpha_limit, alpha_min,
                       image, depth_map, t_final,
                       grad_image, grad_alpha, grad_depth):
    m = means.shape[0]
    g_means = np.zeros((m, 2))
    g_inv = np.zeros((m, 3))
    g_opacity = np.zeros(m)
    g_color = np.zeros((m, 3))
    g_depthv = np.zeros(m)

    bg = np.asarray(background)
    # Totals over gaussian contributions only (background stripped out).
    color_total = image - t_final[:, :, None] * bg
    depth_total = depth_map

    trans = np.ones((height, width))
    prefix_c = np.zeros((height, width, 3))
    prefix_z = np.zeros((height, width))

    px = np.arange(width) + 0.5
    py = np.arange(height) + 0.5

    for i in range(m):
        y0, y1, x0, x1 = _bbox(means[i, 0], means[i, 1], radius[i], height, width)
        if y1 < y0 or x1 < x0:
            continue
        dx = px[x0:x1 + 1] - means[i, 0]
        dy = py[y0:y1 + 1] - means[i, 1]
        a, b, c = inv_cov[i]
        q = a * dx[None, :] ** 2 + 2.0 * b * dy[:, None] * dx[None, :] + c * dy[:, None] ** 2
        g = np.exp(-0.5 * q)
        raw = opacity[i] * g
        clamped = raw >= alpha_limit
        alpha = np.where(clamped, alpha_limit, raw)
        active = alpha >= alpha_min if alpha_min > 0.0 else np.ones_like(alpha, dtype=bool)

        sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        t_here = trans[sl]
        w = np.where(active, alpha * t_here, 0.0)
        prefix_c[sl] += w[:, :, None] * color[i]
        prefix_z[sl] += w * depth[i]
        suffix_c = color_total[sl] - prefix_c[sl]
        suffix_z = depth_total[sl] - prefix_z[sl]

        gc_pix = grad_image[sl]
        ga_pix = grad_alpha[sl]
        gd_pix = grad_depth[sl]
        tf_pix = t_final[sl]

        g_color[i] += np.einsum("yx,yxk->k", w, gc_pix)
        g_depthv[i] += float((w * gd_pix).sum())

        om = np.where(active, 1.0 - alpha, 1.0)
        d_alpha = (
            t_here * np.einsum("yxk,k->yx", gc_pix, color[i])
            - np.einsum("yxk,yxk->yx", gc_pix, suffix_c) / om
            - np.einsum("yxk,k->yx", gc_pix, bg) * tf_pix / om
            + ga_pix * tf_pix / om
            + gd_pix * (t_here * depth[i] - suffix_z / om)
        )
        live = active & ~clamped
        d_alpha = np.where(live, d_alpha, 0.0)

        g_opacity[i] += float((d_alpha * g).sum())
        gq = -0.5 * g * opacity[i] * d_alpha
        g_inv[i, 0] += float((gq * dx[None, :] ** 2).sum())
        g_inv[i, 1] += float((gq * 2.0 * dy[:, None] * dx[None, :]).sum())
        g_inv[i, 2] += float((gq * dy[:, None] ** 2).sum())
        g_means[i, 0] += float((gq * -2.0 * (a * dx[None, :] + b * dy[:, None])).sum())
        g_means[i, 1] += float((gq * -2.0 * (b * dx[None, :] + c * dy[:, None])).sum())

        trans[sl] = t_here * om

    return g_means, g_inv, g_opacity, g_color, g_depthv
