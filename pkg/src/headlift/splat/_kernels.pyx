# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled compositing kernels, the hot twin of _reference.py.

Same contract and the same arithmetic ordering per contribution; forward
outputs agree with the reference backend to the last few ulps (libm exp and
numpy's vectorized exp may round differently) and are bitwise equal for the
untouched-pixel background guarantee.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, floor, isfinite

cnp.import_array()


cdef inline bint _bbox(double u, double v, double r,
                       Py_ssize_t height, Py_ssize_t width,
                       Py_ssize_t *y0, Py_ssize_t *y1,
                       Py_ssize_t *x0, Py_ssize_t *x1) noexcept nogil:
    cdef double lo, hi
    if not isfinite(r):
        y0[0] = 0
        y1[0] = height - 1
        x0[0] = 0
        x1[0] = width - 1
        return height > 0 and width > 0
    lo = ceil(u - r - 0.5)
    hi = floor(u + r - 0.5)
    if hi < 0 or lo > width - 1 or hi < lo:
        return False
    x0[0] = <Py_ssize_t>(lo if lo > 0 else 0)
    x1[0] = <Py_ssize_t>(hi if hi < width - 1 else width - 1)
    lo = ceil(v - r - 0.5)
    hi = floor(v + r - 0.5)
    if hi < 0 or lo > height - 1 or hi < lo:
        return False
    y0[0] = <Py_ssize_t>(lo if lo > 0 else 0)
    y1[0] = <Py_ssize_t>(hi if hi < height - 1 else height - 1)
    return True


def composite_forward(means, inv_cov, opacity, color, depth, radius,
                      height, width, background, alpha_limit, alpha_min):
    cdef double[:, ::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    cdef double[:, ::1] ic = np.ascontiguousarray(inv_cov, dtype=np.float64)
    cdef double[::1] op = np.ascontiguousarray(opacity, dtype=np.float64)
    cdef double[:, ::1] col = np.ascontiguousarray(color, dtype=np.float64)
    cdef double[::1] zs = np.ascontiguousarray(depth, dtype=np.float64)
    cdef double[::1] rad = np.ascontiguousarray(radius, dtype=np.float64)
    cdef double[::1] bg = np.ascontiguousarray(background, dtype=np.float64)
    cdef Py_ssize_t h = height, w = width, m = mu.shape[0]
    cdef double limit = alpha_limit, amin = alpha_min

    image_arr = np.zeros((h, w, 3))
    depth_arr = np.zeros((h, w))
    trans_arr = np.ones((h, w))
    clamp_arr = np.zeros(m, dtype=np.int64)
    cdef double[:, :, ::1] image = image_arr
    cdef double[:, ::1] depth_map = depth_arr
    cdef double[:, ::1] trans = trans_arr
    cdef cnp.int64_t[::1] clamp_count = clamp_arr

    cdef Py_ssize_t i, yy, xx, y0, y1, x0, x1
    cdef double u, v, a, b, c, o, c0, c1, c2, zi
    cdef double dx, dy, q, g, raw, alpha, wgt

    with nogil:
        for i in range(m):
            u = mu[i, 0]
            v = mu[i, 1]
            if not _bbox(u, v, rad[i], h, w, &y0, &y1, &x0, &x1):
                continue
            a = ic[i, 0]
            b = ic[i, 1]
            c = ic[i, 2]
            o = op[i]
            c0 = col[i, 0]
            c1 = col[i, 1]
            c2 = col[i, 2]
            zi = zs[i]
            for yy in range(y0, y1 + 1):
                dy = (yy + 0.5) - v
                for xx in range(x0, x1 + 1):
                    dx = (xx + 0.5) - u
                    q = a * (dx * dx) + ((2.0 * b) * dy) * dx + c * (dy * dy)
                    g = exp(-0.5 * q)
                    raw = o * g
                    if raw >= limit:
                        alpha = limit
                        clamp_count[i] += 1
                    else:
                        alpha = raw
                    if amin > 0.0 and alpha < amin:
                        continue
                    wgt = alpha * trans[yy, xx]
                    image[yy, xx, 0] += wgt * c0
                    image[yy, xx, 1] += wgt * c1
                    image[yy, xx, 2] += wgt * c2
                    depth_map[yy, xx] += wgt * zi
                    trans[yy, xx] *= 1.0 - alpha

        for yy in range(h):
            for xx in range(w):
                image[yy, xx, 0] += trans[yy, xx] * bg[0]
                image[yy, xx, 1] += trans[yy, xx] * bg[1]
                image[yy, xx, 2] += trans[yy, xx] * bg[2]

    alpha_arr = 1.0 - trans_arr
    return image_arr, alpha_arr, depth_arr, trans_arr, clamp_arr


def composite_backward(means, inv_cov, opacity, color, depth, radius,
                       height, width, background, alpha_limit, alpha_min,
                       image, depth_map, t_final,
                       grad_image, grad_alpha, grad_depth):
    cdef double[:, ::1] mu = np.ascontiguousarray(means, dtype=np.float64)
    cdef double[:, ::1] ic = np.ascontiguousarray(inv_cov, dtype=np.float64)
    cdef double[::1] op = np.ascontiguousarray(opacity, dtype=np.float64)
    cdef double[:, ::1] col = np.ascontiguousarray(color, dtype=np.float64)
    cdef double[::1] zs = np.ascontiguousarray(depth, dtype=np.float64)
    cdef double[::1] rad = np.ascontiguousarray(radius, dtype=np.float64)
    cdef double[::1] bg = np.ascontiguousarray(background, dtype=np.float64)
    cdef double[:, :, ::1] img = np.ascontiguousarray(image, dtype=np.float64)
    cdef double[:, ::1] dtot = np.ascontiguousarray(depth_map, dtype=np.float64)
    cdef double[:, ::1] tfin = np.ascontiguousarray(t_final, dtype=np.float64)
    cdef double[:, :, ::1] gi = np.ascontiguousarray(grad_image, dtype=np.float64)
    cdef double[:, ::1] ga = np.ascontiguousarray(grad_alpha, dtype=np.float64)
    cdef double[:, ::1] gd = np.ascontiguousarray(grad_depth, dtype=np.float64)
    cdef Py_ssize_t h = height, w = width, m = mu.shape[0]
    cdef double limit = alpha_limit, amin = alpha_min

    g_means_arr = np.zeros((m, 2))
    g_inv_arr = np.zeros((m, 3))
    g_opacity_arr = np.zeros(m)
    g_color_arr = np.zeros((m, 3))
    g_depthv_arr = np.zeros(m)
    cdef double[:, ::1] g_means = g_means_arr
    cdef double[:, ::1] g_inv = g_inv_arr
    cdef double[::1] g_opacity = g_opacity_arr
    cdef double[:, ::1] g_color = g_color_arr
    cdef double[::1] g_depthv = g_depthv_arr

    trans_arr = np.ones((h, w))
    prefix_c_arr = np.zeros((h, w, 3))
    prefix_z_arr = np.zeros((h, w))
    cdef double[:, ::1] trans = trans_arr
    cdef double[:, :, ::1] prefix_c = prefix_c_arr
    cdef double[:, ::1] prefix_z = prefix_z_arr

    cdef Py_ssize_t i, yy, xx, y0, y1, x0, x1
    cdef double u, v, a, b, c, o, c0, c1, c2, zi
    cdef double dx, dy, q, g, raw, alpha, wgt, om, t_here, tf
    cdef double suf0, suf1, suf2, sufz, gi0, gi1, gi2
    cdef double dot_col, dot_suf, dot_bg, d_alpha, gq
    cdef bint clamped

    with nogil:
        for i in range(m):
            u = mu[i, 0]
            v = mu[i, 1]
            if not _bbox(u, v, rad[i], h, w, &y0, &y1, &x0, &x1):
                continue
            a = ic[i, 0]
            b = ic[i, 1]
            c = ic[i, 2]
            o = op[i]
            c0 = col[i, 0]
            c1 = col[i, 1]
            c2 = col[i, 2]
            zi = zs[i]
            for yy in range(y0, y1 + 1):
                dy = (yy + 0.5) - v
                for xx in range(x0, x1 + 1):
                    dx = (xx + 0.5) - u
                    q = a * (dx * dx) + ((2.0 * b) * dy) * dx + c * (dy * dy)
                    g = exp(-0.5 * q)
                    raw = o * g
                    if raw >= limit:
                        alpha = limit
                        clamped = True
                    else:
                        alpha = raw
                        clamped = False
                    if amin > 0.0 and alpha < amin:
                        continue
                    t_here = trans[yy, xx]
                    wgt = alpha * t_here
                    prefix_c[yy, xx, 0] += wgt * c0
                    prefix_c[yy, xx, 1] += wgt * c1
                    prefix_c[yy, xx, 2] += wgt * c2
                    prefix_z[yy, xx] += wgt * zi
                    tf = tfin[yy, xx]
                    suf0 = (img[yy, xx, 0] - tf * bg[0]) - prefix_c[yy, xx, 0]
                    suf1 = (img[yy, xx, 1] - tf * bg[1]) - prefix_c[yy, xx, 1]
                    suf2 = (img[yy, xx, 2] - tf * bg[2]) - prefix_c[yy, xx, 2]
                    sufz = dtot[yy, xx] - prefix_z[yy, xx]
                    gi0 = gi[yy, xx, 0]
                    gi1 = gi[yy, xx, 1]
                    gi2 = gi[yy, xx, 2]

                    g_color[i, 0] += wgt * gi0
                    g_color[i, 1] += wgt * gi1
                    g_color[i, 2] += wgt * gi2
                    g_depthv[i] += wgt * gd[yy, xx]

                    om = 1.0 - alpha
                    if not clamped:
                        dot_col = gi0 * c0 + gi1 * c1 + gi2 * c2
                        dot_suf = gi0 * suf0 + gi1 * suf1 + gi2 * suf2
                        dot_bg = gi0 * bg[0] + gi1 * bg[1] + gi2 * bg[2]
                        d_alpha = (t_here * dot_col - dot_suf / om
                                   - dot_bg * tf / om + ga[yy, xx] * tf / om
                                   + gd[yy, xx] * (t_here * zi - sufz / om))
                        g_opacity[i] += d_alpha * g
                        gq = -0.5 * g * o * d_alpha
                        g_inv[i, 0] += gq * (dx * dx)
                        g_inv[i, 1] += gq * ((2.0 * dy) * dx)
                        g_inv[i, 2] += gq * (dy * dy)
                        g_means[i, 0] += gq * (-2.0 * (a * dx + b * dy))
                        g_means[i, 1] += gq * (-2.0 * (b * dx + c * dy))
                    trans[yy, xx] = t_here * om

    return g_means_arr, g_inv_arr, g_opacity_arr, g_color_arr, g_depthv_arr
