"""Single-view shelf-image rectification toolkit.

A homography between the distorted capture and its fronto-parallel view
is parameterized by the vertical displacements of the four image
corners, with only one side movable at a time.  The package covers the
full pipeline: exact 4-correspondence homography estimation, masked
bilinear warping with reverse-mode gradients, synthetic data generation,
displacement-pool augmentation, a small trainable regressor, the
evaluation protocol, a CLI, and a local annotation service.
"""

from .errors import (
    AtInfinity,
    CheckpointMismatch,
    EmptyMask,
    EmptyPool,
    EmptySplit,
    FrontoError,
    InvariantViolation,
    MissingPrediction,
    NonFiniteGradient,
    OutOfRange,
    ParseError,
    ShapeMismatch,
    SingularSystem,
)
from .geom import (
    BL,
    BR,
    TL,
    TR,
    CornerSet,
    DisplacementVector,
    Homography,
    ScaleTransform,
    displacement_to_homography,
    homography_to_displacement,
    rescale_homography,
)
from .image import ImageBuffer, ValidityMask, load_png, save_png
from .warp import photometric_l1, unwarp_to_fronto_parallel, warp_gradient, warp_image

__version__ = "0.1.0"

__all__ = [
    "AtInfinity",
    "BL",
    "BR",
    "CheckpointMismatch",
    "CornerSet",
    "DisplacementVector",
    "EmptyMask",
    "EmptyPool",
    "EmptySplit",
    "FrontoError",
    "Homography",
    "ImageBuffer",
    "InvariantViolation",
    "MissingPrediction",
    "NonFiniteGradient",
    "OutOfRange",
    "ParseError",
    "ScaleTransform",
    "ShapeMismatch",
    "SingularSystem",
    "TL",
    "TR",
    "ValidityMask",
    "__version__",
    "displacement_to_homography",
    "homography_to_displacement",
    "load_png",
    "photometric_l1",
    "rescale_homography",
    "save_png",
    "unwarp_to_fronto_parallel",
    "warp_gradient",
    "warp_image",
]
