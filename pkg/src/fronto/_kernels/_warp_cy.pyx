# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled warp kernels; semantics mirror _warp_np exactly.

Output rows are fully independent, so any row execution order yields
identical results; this implementation simply runs them sequentially.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

DEF DENOM_EPS = 1e-12


def warp_bilinear(src, G, int out_h, int out_w):
    """Inverse-mapped bilinear warp; see the NumPy backend for the contract."""
    cdef const double[:, :, ::1] s = np.ascontiguousarray(src, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef int H = s.shape[0]
    cdef int W = s.shape[1]
    cdef int C = s.shape[2]

    out_arr = np.zeros((out_h, out_w, C), dtype=np.float64)
    valid_arr = np.zeros((out_h, out_w), dtype=np.uint8)
    cdef double[:, :, ::1] out = out_arr
    cdef unsigned char[:, ::1] valid = valid_arr

    cdef int x, y, c, x0, y0, x1, y1
    cdef double fx, fy, p, q, d, u, v, fu, fv, w00, w01, w10, w11

    for y in range(out_h):
        fy = y
        for x in range(out_w):
            fx = x
            p = g[0, 0] * fx + g[0, 1] * fy + g[0, 2]
            q = g[1, 0] * fx + g[1, 1] * fy + g[1, 2]
            d = g[2, 0] * fx + g[2, 1] * fy + g[2, 2]
            if d >= -DENOM_EPS and d <= DENOM_EPS:
                continue
            u = p / d
            v = q / d
            if u < 0.0 or u > W - 1.0 or v < 0.0 or v > H - 1.0:
                continue
            valid[y, x] = 1
            x0 = <int>u
            y0 = <int>v
            if x0 > W - 1:
                x0 = W - 1
            if y0 > H - 1:
                y0 = H - 1
            x1 = x0 + 1
            y1 = y0 + 1
            if x1 > W - 1:
                x1 = W - 1
            if y1 > H - 1:
                y1 = H - 1
            fu = u - x0
            fv = v - y0
            w00 = (1.0 - fu) * (1.0 - fv)
            w01 = fu * (1.0 - fv)
            w10 = (1.0 - fu) * fv
            w11 = fu * fv
            for c in range(C):
                out[y, x, c] = (
                    w00 * s[y0, x0, c]
                    + w01 * s[y0, x1, c]
                    + w10 * s[y1, x0, c]
                    + w11 * s[y1, x1, c]
                )
    return out_arr, valid_arr


def warp_bilinear_grad_matrix(src, G, upstream):
    """Gradient of sum(upstream * warp) w.r.t. G; see the NumPy backend."""
    cdef const double[:, :, ::1] s = np.ascontiguousarray(src, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[:, :, ::1] up = np.ascontiguousarray(upstream, dtype=np.float64)
    cdef int H = s.shape[0]
    cdef int W = s.shape[1]
    cdef int C = s.shape[2]
    cdef int out_h = up.shape[0]
    cdef int out_w = up.shape[1]

    dG_arr = np.zeros((3, 3), dtype=np.float64)
    cdef double[:, ::1] dG = dG_arr

    cdef int x, y, c, x0, y0, x1, y1
    cdef double fx, fy, p, q, d, u, v, fu, fv
    cdef double a, dvdu, dvdv, gu, gv, rw, t0, t1, t2

    for y in range(out_h):
        fy = y
        for x in range(out_w):
            fx = x
            p = g[0, 0] * fx + g[0, 1] * fy + g[0, 2]
            q = g[1, 0] * fx + g[1, 1] * fy + g[1, 2]
            d = g[2, 0] * fx + g[2, 1] * fy + g[2, 2]
            if d >= -DENOM_EPS and d <= DENOM_EPS:
                continue
            u = p / d
            v = q / d
            if u < 0.0 or u > W - 1.0 or v < 0.0 or v > H - 1.0:
                continue
            x0 = <int>u
            y0 = <int>v
            if x0 > W - 1:
                x0 = W - 1
            if y0 > H - 1:
                y0 = H - 1
            x1 = x0 + 1
            y1 = y0 + 1
            if x1 > W - 1:
                x1 = W - 1
            if y1 > H - 1:
                y1 = H - 1
            fu = u - x0
            fv = v - y0
            gu = 0.0
            gv = 0.0
            for c in range(C):
                a = up[y, x, c]
                dvdu = (1.0 - fv) * (s[y0, x1, c] - s[y0, x0, c]) + fv * (s[y1, x1, c] - s[y1, x0, c])
                dvdv = (1.0 - fu) * (s[y1, x0, c] - s[y0, x0, c]) + fu * (s[y1, x1, c] - s[y0, x1, c])
                gu += a * dvdu
                gv += a * dvdv
            rw = 1.0 / d
            t0 = gu * rw
            t1 = gv * rw
            t2 = -(gu * u + gv * v) * rw
            dG[0, 0] += t0 * fx
            dG[0, 1] += t0 * fy
            dG[0, 2] += t0
            dG[1, 0] += t1 * fx
            dG[1, 1] += t1 * fy
            dG[1, 2] += t1
            dG[2, 0] += t2 * fx
            dG[2, 1] += t2 * fy
            dG[2, 2] += t2
    return dG_arr
