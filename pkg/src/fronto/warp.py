"""Image resampling: inverse-mapped bilinear warping, masked photometric
distance, and the gradient of a warp with respect to the corner displacements.

Warping by a rectifying homography H fills each output pixel p with the
bilinear sample of the source at H^-1 p.  Pixels whose sample point leaves
the source frame are written as 0 and marked invalid in the companion mask.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from . import _kernels, geom
from .errors import EmptyMask, ShapeMismatch, SingularSystem
from .geom import DisplacementVector, Homography
from .image import ImageBuffer, ValidityMask

if TYPE_CHECKING:
    from .dataset import AnnotationRecord


def _inverse_matrix(H: Homography) -> np.ndarray:
    try:
        return np.linalg.inv(H.matrix)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"homography not invertible: {exc}") from exc


def warp_image(
    src: ImageBuffer, H: Homography, out_width: int, out_height: int
) -> tuple[ImageBuffer, ValidityMask]:
    """Warp src by H: output pixel p takes the bilinear sample at H^-1 p."""
    G = _inverse_matrix(H)
    out, valid = _kernels.warp_bilinear(src.data, G, int(out_height), int(out_width))
    return ImageBuffer(out), ValidityMask(valid)


def unwarp_to_fronto_parallel(
    img: ImageBuffer, record: "AnnotationRecord"
) -> tuple[ImageBuffer, ValidityMask]:
    """Rectify an annotated image with its ground-truth displacements.

    The image must be at the record's original resolution; the result has
    the same dimensions.
    """
    if (img.width, img.height) != (record.orig_width, record.orig_height):
        raise ShapeMismatch(
            f"image is {img.width}x{img.height} but record says "
            f"{record.orig_width}x{record.orig_height}"
        )
    H = geom.displacement_to_homography(record.d, img.width, img.height)
    return warp_image(img, H, img.width, img.height)


def photometric_l1(a: ImageBuffer, b: ImageBuffer, mask: ValidityMask) -> float:
    """Mean absolute intensity difference over valid pixels and channels."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    if (mask.height, mask.width) != (a.height, a.width):
        raise ShapeMismatch("mask dimensions do not match the images")
    n = mask.count() * a.channels
    if n == 0:
        raise EmptyMask("photometric distance over an empty mask")
    diff = np.abs(a.data - b.data)[mask.bits]
    return float(diff.sum() / n)


def warp_gradient(src: ImageBuffer, d: DisplacementVector, upstream: np.ndarray) -> np.ndarray:
    """Gradient of an upstream-weighted warp with respect to the displacements.

    Computes d/dd of sum(upstream * warp_image(src, H(d))) by chaining the
    bilinear sampling derivative, the entries of H^-1, and the adjoint of
    the 8x8 corner-correspondence solve (one transposed-system solve).
    Returns a length-4 float64 array in corner order.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.ndim != 3 or upstream.shape[2] != src.channels:
        raise ShapeMismatch(f"upstream must be (H, W, {src.channels}), got {upstream.shape}")

    H = geom.displacement_to_homography(d, src.width, src.height)
    G = _inverse_matrix(H)
    dG = _kernels.warp_bilinear_grad_matrix(src.data, G, upstream)

    # G = inv(H)  =>  dL/dH = -G^T dL/dG G^T
    dH = -G.T @ dG @ G.T

    # Adjoint of the linear solve A(d) h = b(d) with h33 pinned to 1:
    # solve A^T lam = dL/dh, then dL/dd_i = lam . (db/dd_i - (dA/dd_i) h).
    corners = geom.CornerSet.default(src.width, src.height)
    dst = corners.displaced(d)
    A, b = geom.dlt_system(corners.points, dst)
    h = np.linalg.solve(A, b)
    dh = dH.ravel()[:8]
    lam = np.linalg.solve(A.T, dh)

    grad = np.empty(4)
    for i in range(4):
        x, y = corners.points[i]
        # Only row 2i+1 depends on d_i:  db = 1,  dA row = (0,...,0,-x,-y).
        grad[i] = lam[2 * i + 1] * (1.0 + x * h[6] + y * h[7])
    return grad
