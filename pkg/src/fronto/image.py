"""Image buffers, validity masks, and 8-bit PNG I/O.

Images are held as float64 arrays of shape (height, width, channels) with
intensities in [0, 1].  PNG load maps 8-bit values linearly to [0, 1];
save rounds half-up back to 8 bits.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvariantViolation, ShapeMismatch

# Rec. 601 luma weights, used when collapsing RGB to grayscale.
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ImageBuffer:
    """H x W x C raster of float64 intensities in [0, 1], C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in (1, 3):
            raise InvariantViolation(f"image must be HxWxC with C in {{1,3}}, got {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise InvariantViolation("image must have positive dimensions")
        if not np.all(np.isfinite(a)):
            raise InvariantViolation("image intensities must be finite")
        if a.min() < 0.0 or a.max() > 1.0:
            raise InvariantViolation("image intensities must lie in [0, 1]")
        a = np.ascontiguousarray(a)
        a.flags.writeable = False
        object.__setattr__(self, "data", a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, width: int, height: int, channels: int = 3) -> "ImageBuffer":
        return cls(np.zeros((height, width, channels)))

    def to_grayscale(self) -> "ImageBuffer":
        if self.channels == 1:
            return self
        g = np.clip(self.data @ _LUMA, 0.0, 1.0)
        return ImageBuffer(g[:, :, None])


@dataclass(frozen=True)
class ValidityMask:
    """Per-pixel validity bits accompanying a warped ImageBuffer."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise InvariantViolation(f"mask must be 2-D, got {b.shape}")
        b = np.ascontiguousarray(b.astype(bool))
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @classmethod
    def full(cls, width: int, height: int) -> "ValidityMask":
        return cls(np.ones((height, width), dtype=bool))

    def count(self) -> int:
        return int(self.bits.sum())

    def intersect(self, other: "ValidityMask") -> "ValidityMask":
        if self.bits.shape != other.bits.shape:
            raise ShapeMismatch("mask dimensions differ")
        return ValidityMask(self.bits & other.bits)

    def bbox(self) -> tuple[int, int, int, int] | None:
        """Tight inclusive bounding box (x0, y0, x1, y1) of valid pixels."""
        ys, xs = np.nonzero(self.bits)
        if ys.size == 0:
            return None
        return (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def quantize(img: ImageBuffer) -> np.ndarray:
    """8-bit view of the buffer, rounding half-up."""
    return np.floor(img.data * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def load_png(path: str | Path) -> ImageBuffer:
    """Read an 8-bit grayscale or RGB PNG into a [0, 1] float buffer."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16"):
            im = im.convert("L")
        elif im.mode != "RGB":
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return ImageBuffer(arr)


def save_png(img: ImageBuffer, path: str | Path) -> None:
    """Write the buffer as an 8-bit PNG (grayscale for C=1, RGB for C=3)."""
    arr = quantize(img)
    if img.channels == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    pil.save(path, format="PNG")


def encode_png(img: ImageBuffer) -> bytes:
    """PNG bytes for the buffer; deterministic for identical pixel data."""
    import io

    buf = io.BytesIO()
    save_png(img, buf)
    return buf.getvalue()
