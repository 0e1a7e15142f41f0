"""On-the-fly geometric augmentation.

With a configured probability, a training sample is unwarped to its
fronto-parallel state using its own label, a replacement displacement is
drawn uniformly from the training pool, and the unwarped image is
re-distorted by the inverse of the replacement's homography.  The new
label is exactly the drawn displacement, so augmented samples carry zero
label noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom, warp
from .dataset import DatasetSplit, rescale_displacement
from .errors import EmptyPool, EmptySplit, InvariantViolation
from .geom import DisplacementVector
from .image import ImageBuffer


@dataclass(frozen=True)
class AugmentConfig:
    """Augmentation probability and RNG seed."""

    probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.probability <= 1.0):
            raise InvariantViolation(f"probability must lie in [0, 1], got {self.probability}")


@dataclass(frozen=True)
class DisplacementPool:
    """Multiset of training displacements at working resolution."""

    entries: np.ndarray  # (N, 4) float64

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] != 4 or e.shape[0] == 0:
            raise EmptyPool(f"pool must be a nonempty (N, 4) array, got {e.shape}")
        e = e.copy()
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    def __len__(self) -> int:
        return self.entries.shape[0]


def build_pool(train_split: DatasetSplit, working_size: int) -> DisplacementPool:
    """All training labels re-expressed at the working resolution.

    Duplicates are retained: the pool is a multiset mirroring the empirical
    training distribution.
    """
    if len(train_split) == 0:
        raise EmptySplit("cannot build a displacement pool from an empty split")
    rows = [
        rescale_displacement(
            r.d, r.orig_width, r.orig_height, working_size, working_size
        ).values
        for r in train_split.records
    ]
    return DisplacementPool(np.stack(rows))


def pool_from_labels(labels: np.ndarray) -> DisplacementPool:
    """Pool over labels already at working resolution (an (N, 4) array)."""
    return DisplacementPool(labels)


def sample(pool: DisplacementPool, rng: np.random.Generator) -> DisplacementVector:
    """Uniform draw from the pool; advances the generator deterministically."""
    idx = int(rng.integers(0, len(pool)))
    return DisplacementVector(pool.entries[idx])


def derive_worker_rng(base_seed: int, worker_index: int, epoch: int) -> np.random.Generator:
    """Deterministic per-(worker, epoch) generator derived from a base seed."""
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(worker_index, epoch))
    return np.random.Generator(np.random.PCG64(ss))


def augment_sample(
    img: ImageBuffer,
    label: DisplacementVector,
    pool: DisplacementPool,
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> tuple[ImageBuffer, DisplacementVector, bool]:
    """Maybe replace (img, label) by a re-distorted variant.

    Draws the apply decision first, then (only when applying) the pool
    entry.  Returns (image, label, applied).  The replacement image is
    warp(unwarp(img, label), H(new)^-1); out-of-frame pixels are black.
    """
    if rng.random() >= cfg.probability:
        return img, label, False
    d_new = sample(pool, rng)
    h, w = img.height, img.width
    H_own = geom.displacement_to_homography(label, w, h)
    unwarped, _ = warp.warp_image(img, H_own, w, h)
    H_new = geom.displacement_to_homography(d_new, w, h)
    distorted, _ = warp.warp_image(unwarped, geom.invert(H_new), w, h)
    return distorted, d_new, True
