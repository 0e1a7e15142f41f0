"""Pure-NumPy warp kernels (fallback when the compiled extension is absent).

Semantics contract shared with the Cython backend:

* Output pixel (x, y) samples the source at the perspective projection of
  (x, y, 1) through G (the inverse of the rectifying homography).
* A pixel is valid iff its sample point (u, v) satisfies
  0 <= u <= W-1 and 0 <= v <= H-1 and the projective denominator is
  nonvanishing; invalid pixels are written as 0.
* Bilinear neighbor indices are clamped to the frame so u == W-1 and
  v == H-1 remain exact samples of the border row/column.
"""

import numpy as np

_DENOM_EPS = 1e-12


def _project(G, out_h, out_w, src_h, src_w):
    xs = np.arange(out_w, dtype=np.float64)
    ys = np.arange(out_h, dtype=np.float64)
    X, Y = np.meshgrid(xs, ys)
    P = G[0, 0] * X + G[0, 1] * Y + G[0, 2]
    Q = G[1, 0] * X + G[1, 1] * Y + G[1, 2]
    D = G[2, 0] * X + G[2, 1] * Y + G[2, 2]
    finite = np.abs(D) > _DENOM_EPS
    Dsafe = np.where(finite, D, 1.0)
    u = P / Dsafe
    v = Q / Dsafe
    valid = finite & (u >= 0.0) & (u <= src_w - 1.0) & (v >= 0.0) & (v <= src_h - 1.0)
    return u, v, Dsafe, valid


def _neighbors(u, v, valid, src_h, src_w):
    # Clamp sample coordinates of invalid pixels so index math stays in range;
    # their contribution is zeroed afterwards.
    uc = np.where(valid, u, 0.0)
    vc = np.where(valid, v, 0.0)
    x0 = np.floor(uc).astype(np.int64)
    y0 = np.floor(vc).astype(np.int64)
    x0 = np.clip(x0, 0, src_w - 1)
    y0 = np.clip(y0, 0, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    y1 = np.minimum(y0 + 1, src_h - 1)
    fu = uc - x0
    fv = vc - y0
    return x0, y0, x1, y1, fu, fv


def warp_bilinear(src, G, out_h, out_w):
    """Inverse-mapped bilinear warp.

    src: (H, W, C) float64; G: (3, 3) float64 mapping output coords to
    source coords (projectively).  Returns (out, valid) with out of shape
    (out_h, out_w, C) and valid of shape (out_h, out_w) uint8.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    H, W, _ = src.shape
    u, v, _, valid = _project(G, out_h, out_w, H, W)
    x0, y0, x1, y1, fu, fv = _neighbors(u, v, valid, H, W)

    I00 = src[y0, x0]
    I01 = src[y0, x1]
    I10 = src[y1, x0]
    I11 = src[y1, x1]
    w00 = ((1.0 - fu) * (1.0 - fv))[:, :, None]
    w01 = (fu * (1.0 - fv))[:, :, None]
    w10 = ((1.0 - fu) * fv)[:, :, None]
    w11 = (fu * fv)[:, :, None]
    out = w00 * I00 + w01 * I01 + w10 * I10 + w11 * I11
    out[~valid] = 0.0
    return out, valid.astype(np.uint8)


def warp_bilinear_grad_matrix(src, G, upstream):
    """Gradient of sum(upstream * warp_bilinear(src, G)) w.r.t. G.

    upstream: (out_h, out_w, C) float64.  Invalid output pixels are
    constant zero and contribute nothing.  Returns a (3, 3) float64 array.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    H, W, _ = src.shape
    out_h, out_w = upstream.shape[:2]
    u, v, Dsafe, valid = _project(G, out_h, out_w, H, W)
    x0, y0, x1, y1, fu, fv = _neighbors(u, v, valid, H, W)

    I00 = src[y0, x0]
    I01 = src[y0, x1]
    I10 = src[y1, x0]
    I11 = src[y1, x1]
    dVdu = (1.0 - fv)[:, :, None] * (I01 - I00) + fv[:, :, None] * (I11 - I10)
    dVdv = (1.0 - fu)[:, :, None] * (I10 - I00) + fu[:, :, None] * (I11 - I01)

    gu = np.where(valid, (upstream * dVdu).sum(axis=2), 0.0)
    gv = np.where(valid, (upstream * dVdv).sum(axis=2), 0.0)

    xs = np.arange(out_w, dtype=np.float64)
    ys = np.arange(out_h, dtype=np.float64)
    X, Y = np.meshgrid(xs, ys)
    rw = 1.0 / Dsafe
    t0 = gu * rw
    t1 = gv * rw
    t2 = -(gu * u + gv * v) * rw

    dG = np.empty((3, 3))
    for row, t in enumerate((t0, t1, t2)):
        dG[row, 0] = (t * X).sum()
        dG[row, 1] = (t * Y).sum()
        dG[row, 2] = t.sum()
    return dG
