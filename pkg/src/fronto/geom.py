"""Exact homography algebra for vertical corner-displacement rectification.

A rectifying transform is parameterized by the vertical displacements of the
four image corners (order TL, TR, BR, BL; positive values move a corner
downward).  The equivalent 3x3 matrix maps distorted-image coordinates to
rectified coordinates and is recovered from the four corner correspondences
by an exact direct linear solve with the bottom-right entry fixed to 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AtInfinity, InvariantViolation, SingularSystem

# Corner indices, fixed convention used by every module.
TL, TR, BR, BL = 0, 1, 2, 3

_DEGENERATE_EPS = 1e-12


@dataclass(frozen=True)
class DisplacementVector:
    """Vertical displacements of the four corners, in pixels.

    Index order is TL=0, TR=1, BR=2, BL=3; positive values point down
    (image y grows downward).  Values must be finite.  Side consistency
    (one side identically zero) is enforced where annotation records are
    built, not here: free vectors such as model predictions may populate
    all four entries.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (4,):
            raise InvariantViolation(f"displacement vector needs 4 values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvariantViolation("displacement values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def of(cls, d0: float, d1: float, d2: float, d3: float) -> "DisplacementVector":
        return cls(np.array([d0, d1, d2, d3], dtype=np.float64))

    @classmethod
    def zero(cls) -> "DisplacementVector":
        return cls(np.zeros(4))

    def __getitem__(self, i: int) -> float:
        return float(self.values[i])

    def as_tuple(self) -> tuple[float, float, float, float]:
        return tuple(float(x) for x in self.values)


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform, canonicalized so matrix[2][2] == 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise InvariantViolation(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvariantViolation("homography entries must be finite")
        if abs(m[2, 2]) < _DEGENERATE_EPS:
            raise SingularSystem("cannot canonicalize: |h33| below 1e-12")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= _DEGENERATE_EPS:
            raise SingularSystem("homography is singular (|det| <= 1e-12)")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return cls(m)


@dataclass(frozen=True)
class CornerSet:
    """Four corner points (x, y) of a width x height frame, order TL,TR,BR,BL."""

    points: np.ndarray
    width: float
    height: float

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.shape != (4, 2):
            raise InvariantViolation(f"corner set needs 4 points, got {p.shape}")
        if _has_collinear_triple(p):
            raise InvariantViolation("corner set has three collinear points")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    @classmethod
    def default(cls, width: float, height: float) -> "CornerSet":
        """Corners of the undisplaced frame: (0,0), (W,0), (W,H), (0,H)."""
        if width <= 0 or height <= 0:
            raise InvariantViolation("frame dimensions must be positive")
        pts = np.array(
            [[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]],
            dtype=np.float64,
        )
        return cls(pts, float(width), float(height))

    def displaced(self, d: DisplacementVector) -> np.ndarray:
        """The corner points with each y shifted by its displacement."""
        out = self.points.copy()
        out[:, 1] += d.values
        return out


@dataclass(frozen=True)
class ScaleTransform:
    """Axis-aligned coordinate scaling between two frame sizes."""

    sx: float
    sy: float

    def __post_init__(self):
        if not (self.sx > 0 and self.sy > 0):
            raise InvariantViolation("scale factors must be positive")

    @classmethod
    def between(cls, orig_w: float, orig_h: float, new_w: float, new_h: float) -> "ScaleTransform":
        return cls(new_w / orig_w, new_h / orig_h)

    def matrix(self) -> np.ndarray:
        return np.diag([self.sx, self.sy, 1.0])

    def inverse_matrix(self) -> np.ndarray:
        return np.diag([1.0 / self.sx, 1.0 / self.sy, 1.0])


def _has_collinear_triple(pts: np.ndarray, eps: float = 1e-9) -> bool:
    for i in range(4):
        for j in range(i + 1, 4):
            for k in range(j + 1, 4):
                a, b, c = pts[i], pts[j], pts[k]
                cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                if abs(cross) <= eps:
                    return True
    return False


def dlt_system(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Build the exact 8x8 linear system for a 4-correspondence homography.

    With h33 fixed to 1, each correspondence (x, y) -> (x', y') contributes
    two equations in the remaining eight entries h = (h11..h32):

        x*h11 + y*h12 + h13 - x'*x*h31 - x'*y*h32 = x'
        x*h21 + y*h22 + h23 - y'*x*h31 - y'*y*h32 = y'

    Returns (A, b) with A of shape (8, 8) and b of shape (8,).
    """
    A = np.zeros((8, 8))
    b = np.zeros(8)
    for i in range(4):
        x, y = src[i]
        xp, yp = dst[i]
        A[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -xp * x, -xp * y]
        b[2 * i] = xp
        A[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -yp * x, -yp * y]
        b[2 * i + 1] = yp
    return A, b


def homography_from_correspondences(src: np.ndarray, dst: np.ndarray) -> Homography:
    """Solve for the homography mapping the four src points onto dst exactly."""
    A, b = dlt_system(np.asarray(src, dtype=np.float64), np.asarray(dst, dtype=np.float64))
    try:
        h = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"degenerate correspondences: {exc}") from exc
    if not np.all(np.isfinite(h)):
        raise SingularSystem("linear solve produced non-finite entries")
    m = np.empty((3, 3))
    m.flat[:8] = h
    m[2, 2] = 1.0
    return Homography(m)


def displacement_to_homography(d: DisplacementVector, width: float, height: float) -> Homography:
    """Homography sending each default corner (x, y) to (x, y + d_i)."""
    corners = CornerSet.default(width, height)
    dst = corners.displaced(d)
    if _has_collinear_triple(dst):
        raise SingularSystem("displaced corners contain three collinear points")
    return homography_from_correspondences(corners.points, dst)


def homography_to_displacement(
    H: Homography, width: float, height: float
) -> tuple[DisplacementVector, bool]:
    """Vertical displacements of the default corners under H.

    Returns (d, lossy).  ``lossy`` is True when H also moves some corner
    horizontally by more than 1e-6 px, i.e. the vertical displacements do
    not fully describe H's action on the frame corners.
    """
    corners = CornerSet.default(width, height).points
    mapped = apply_many(H, corners)
    dy = mapped[:, 1] - corners[:, 1]
    dx = mapped[:, 0] - corners[:, 0]
    lossy = bool(np.any(np.abs(dx) > 1e-6))
    return DisplacementVector(dy), lossy


def rescale_homography(H: Homography, s: ScaleTransform) -> Homography:
    """Conjugate H by a coordinate scaling: S . H . S^-1.

    This re-expresses the same geometric transform in a resized frame;
    conjugating by the identity scale returns H unchanged.
    """
    m = s.matrix() @ H.matrix @ s.inverse_matrix()
    return Homography(m)


def apply(H: Homography, p: tuple[float, float]) -> tuple[float, float]:
    """Projective image of a single point under H, with perspective division."""
    x, y = float(p[0]), float(p[1])
    m = H.matrix
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) < _DEGENERATE_EPS:
        raise AtInfinity(f"point ({x}, {y}) maps to infinity (denominator {w})")
    u = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
    v = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
    return (u, v)


def apply_many(H: Homography, pts: np.ndarray) -> np.ndarray:
    """Projective images of an (N, 2) array of points under H."""
    pts = np.asarray(pts, dtype=np.float64)
    ones = np.ones((pts.shape[0], 1))
    hom = np.hstack([pts, ones]) @ H.matrix.T
    w = hom[:, 2]
    if np.any(np.abs(w) < _DEGENERATE_EPS):
        raise AtInfinity("some points map to infinity")
    return hom[:, :2] / w[:, None]


def invert(H: Homography) -> Homography:
    """Inverse transform; raises SingularSystem on numerically singular input."""
    try:
        m = np.linalg.inv(H.matrix)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"homography not invertible: {exc}") from exc
    return Homography(m)


def compose(A: Homography, B: Homography) -> Homography:
    """Composite transform acting as A after B (matrix product A @ B)."""
    return Homography(A.matrix @ B.matrix)


def serialize_homography(H: Homography) -> str:
    """Nine row-major decimal numbers, space-separated."""
    return " ".join(repr(float(v)) for v in H.matrix.ravel())


def parse_homography(text: str) -> Homography:
    parts = text.split()
    if len(parts) != 9:
        raise InvariantViolation(f"expected 9 matrix entries, got {len(parts)}")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise InvariantViolation(f"bad matrix entry: {exc}") from exc
    return Homography(np.array(vals).reshape(3, 3))


def serialize_displacement(d: DisplacementVector) -> str:
    """Four decimals in corner order TL TR BR BL, space-separated."""
    return " ".join(repr(float(v)) for v in d.values)


def parse_displacement(text: str) -> DisplacementVector:
    parts = text.split()
    if len(parts) != 4:
        raise InvariantViolation(f"expected 4 displacement values, got {len(parts)}")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise InvariantViolation(f"bad displacement value: {exc}") from exc
    return DisplacementVector.of(*vals)
