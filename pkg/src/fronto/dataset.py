"""Dataset storage, label rescaling, statistics, and synthetic scene generation.

A dataset lives in a directory with three line-oriented manifests
(train.txt, val.txt, test.txt) and an images/ folder of PNGs.  Each
manifest line is

    image_id side d0 d1 d2 d3 orig_w orig_h

space-separated, displacements in original-resolution pixels.  Annotations
displace exactly one side of the image: Left records may move corners
TL/BL only, Right records TR/BR only, and every displacement magnitude is
strictly below half the original height.

The synthetic generator renders a fronto-parallel shelf scene (horizontal
shelf bands plus colored product rectangles), then distorts it with the
inverse of the rectifying homography so that the stored label rectifies
the produced image exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import geom, warp
from .errors import EmptySplit, InvariantViolation, ParseError
from .geom import DisplacementVector, ScaleTransform
from .image import ImageBuffer, load_png, save_png

LEFT = "Left"
RIGHT = "Right"
SIDES = (LEFT, RIGHT)

SPLIT_NAMES = ("train", "val", "test")

# Movable corner indices per side (top corner first).
SIDE_CORNERS = {LEFT: (geom.TL, geom.BL), RIGHT: (geom.TR, geom.BR)}

# Sampler statistics for synthetic displacements, expressed at 224 px and
# scaled linearly to other working sizes: |d| ~ Normal(19, 8) truncated to
# [0, 56], side chosen uniformly, sign uniform per corner.
SAMPLER_REFERENCE_SIZE = 224.0
SAMPLER_MEAN = 19.0
SAMPLER_SD = 8.0
SAMPLER_MAX = 56.0


def check_side_consistency(side: str, d: DisplacementVector) -> None:
    if side not in SIDES:
        raise InvariantViolation(f"side must be Left or Right, got {side!r}")
    fixed = SIDE_CORNERS[RIGHT] if side == LEFT else SIDE_CORNERS[LEFT]
    for i in fixed:
        if d[i] != 0.0:
            raise InvariantViolation(
                f"side={side} requires corner {i} fixed, but d[{i}]={d[i]}"
            )


@dataclass(frozen=True)
class AnnotationRecord:
    """Ground truth for one image: identity, dimensions, side, displacements."""

    image_id: str
    orig_width: int
    orig_height: int
    side: str
    d: DisplacementVector

    def __post_init__(self):
        if not self.image_id or any(c.isspace() for c in self.image_id):
            raise InvariantViolation(f"image_id must be non-empty without whitespace: {self.image_id!r}")
        if self.orig_width <= 0 or self.orig_height <= 0:
            raise InvariantViolation("original dimensions must be positive")
        check_side_consistency(self.side, self.d)
        bound = self.orig_height / 2.0
        for i in range(4):
            if abs(self.d[i]) >= bound:
                raise InvariantViolation(
                    f"|d[{i}]| = {abs(self.d[i])} exceeds the legal bound {bound}"
                )


@dataclass(frozen=True)
class DatasetSplit:
    """Named, ordered collection of annotation records with unique ids."""

    name: str
    records: tuple[AnnotationRecord, ...]

    def __post_init__(self):
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise InvariantViolation(f"duplicate image ids in split {self.name}: {dupes}")
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class CornerStats:
    """Mean absolute displacement per corner plus side counts."""

    per_corner: tuple[float, float, float, float]
    overall: float
    left_count: int
    right_count: int

    def to_text(self) -> str:
        lines = [
            f"mean_abs_tl = {self.per_corner[0]!r}",
            f"mean_abs_tr = {self.per_corner[1]!r}",
            f"mean_abs_br = {self.per_corner[2]!r}",
            f"mean_abs_bl = {self.per_corner[3]!r}",
            f"overall_mean = {self.overall!r}",
            f"left_count = {self.left_count}",
            f"right_count = {self.right_count}",
        ]
        return "\n".join(lines) + "\n"


def format_record(record: AnnotationRecord) -> str:
    ds = " ".join(repr(float(v)) for v in record.d.values)
    return f"{record.image_id} {record.side} {ds} {record.orig_width} {record.orig_height}"


def parse_record_line(line: str, lineno: int | None = None) -> AnnotationRecord:
    parts = line.split()
    if len(parts) != 8:
        raise ParseError(f"expected 8 fields, got {len(parts)}", lineno)
    image_id, side = parts[0], parts[1]
    try:
        values = [float(p) for p in parts[2:6]]
        w, h = int(parts[6]), int(parts[7])
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from exc
    # malformed text -> ParseError above; an illegal but well-formed record
    # keeps its InvariantViolation type
    return AnnotationRecord(image_id, w, h, side, DisplacementVector.of(*values))


def save_manifest(records, path: str | Path) -> None:
    text = "".join(format_record(r) + "\n" for r in records)
    Path(path).write_text(text, encoding="utf-8")


def load_manifest(path: str | Path) -> list[AnnotationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            records.append(parse_record_line(line, lineno))
    return records


def load_dataset(root: str | Path) -> dict[str, DatasetSplit]:
    """Load the three split manifests under root; absent files yield empty splits.

    Raises ParseError on malformed lines and InvariantViolation on illegal
    records or ids duplicated within or across splits.
    """
    root = Path(root)
    splits: dict[str, DatasetSplit] = {}
    seen: dict[str, str] = {}
    for name in SPLIT_NAMES:
        path = root / f"{name}.txt"
        records = load_manifest(path) if path.exists() else []
        for r in records:
            if r.image_id in seen:
                raise InvariantViolation(
                    f"image id {r.image_id!r} appears in both {seen[r.image_id]} and {name}"
                )
            seen[r.image_id] = name
        splits[name] = DatasetSplit(name, tuple(records))
    return splits


def save_dataset(splits: dict[str, DatasetSplit], root: str | Path) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for name in SPLIT_NAMES:
        split = splits.get(name)
        save_manifest(split.records if split else (), root / f"{name}.txt")


def image_path(root: str | Path, image_id: str) -> Path:
    return Path(root) / "images" / f"{image_id}.png"


def rescale_displacement(
    d: DisplacementVector, orig_w: int, orig_h: int, new_w: int, new_h: int
) -> DisplacementVector:
    """Re-express corner displacements in a resized frame.

    Routes through the matrix form: build the homography at the original
    size, conjugate by the frame scaling, and read the corner displacements
    back off at the new size.
    """
    H = geom.displacement_to_homography(d, orig_w, orig_h)
    s = ScaleTransform.between(orig_w, orig_h, new_w, new_h)
    H_new = geom.rescale_homography(H, s)
    d_new, _ = geom.homography_to_displacement(H_new, new_w, new_h)
    return d_new


def resize_record(
    record: AnnotationRecord, img: ImageBuffer, target: int
) -> tuple[ImageBuffer, DisplacementVector]:
    """Bilinearly resize an image to target x target and rescale its label."""
    if target <= 0:
        raise InvariantViolation("target size must be positive")
    if (img.width, img.height) != (record.orig_width, record.orig_height):
        raise InvariantViolation(
            f"image is {img.width}x{img.height} but record says "
            f"{record.orig_width}x{record.orig_height}"
        )
    s = ScaleTransform.between(img.width, img.height, target, target)
    resized, _ = warp.warp_image(img, geom.Homography(s.matrix()), target, target)
    d_new = rescale_displacement(record.d, record.orig_width, record.orig_height, target, target)
    return resized, d_new


def compute_stats(split: DatasetSplit) -> CornerStats:
    """Per-corner mean absolute displacement and side counts for a split."""
    if len(split) == 0:
        raise EmptySplit(f"split {split.name} is empty")
    mags = np.abs(np.stack([r.d.values for r in split.records]))
    per_corner = tuple(float(v) for v in mags.mean(axis=0))
    overall = float(mags.mean(axis=1).mean())
    left = sum(1 for r in split.records if r.side == LEFT)
    right = len(split) - left
    return CornerStats(per_corner, overall, left, right)


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Deterministic recipe for one synthetic sample.

    ``displacement`` may pin an explicit label; when None, side and
    displacements are drawn from the documented sampler distribution.
    """

    seed: int
    size: int = 224
    shelf_rows: int = 4
    product_count: int = 12
    displacement: DisplacementVector | None = None
    side: str | None = None

    def __post_init__(self):
        if self.size < 8:
            raise InvariantViolation("synthetic size must be at least 8 px")
        if self.shelf_rows < 1:
            raise InvariantViolation("need at least one shelf row")
        if self.displacement is not None and self.side is None:
            raise InvariantViolation("explicit displacement requires an explicit side")


def _truncated_normal(rng: np.random.Generator, mean: float, sd: float, lo: float, hi: float) -> float:
    while True:
        x = rng.normal(mean, sd)
        if lo <= x <= hi:
            return float(x)


def sample_displacement(rng: np.random.Generator, size: int) -> tuple[str, DisplacementVector]:
    """Draw (side, displacement) from the synthetic annotation distribution."""
    scale = size / SAMPLER_REFERENCE_SIZE
    side = LEFT if rng.random() < 0.5 else RIGHT
    d = np.zeros(4)
    for corner in SIDE_CORNERS[side]:
        mag = _truncated_normal(rng, SAMPLER_MEAN, SAMPLER_SD, 0.0, SAMPLER_MAX) * scale
        sign = 1.0 if rng.random() < 0.5 else -1.0
        d[corner] = sign * mag
    return side, DisplacementVector(d)


def _render_scene(rng: np.random.Generator, size: int, rows: int, products: int) -> np.ndarray:
    img = np.empty((size, size, 3))
    img[:, :] = rng.uniform(0.72, 0.9, size=3)

    band_h = max(2, int(round(size * 0.045)))
    ys = np.linspace(size * 0.18, size * 0.92, rows)
    shelf_tops = []
    for yc in ys:
        y0 = int(round(yc + rng.uniform(-size * 0.02, size * 0.02)))
        y0 = min(max(y0, 0), size - band_h)
        color = rng.uniform(0.12, 0.3, size=3)
        img[y0 : y0 + band_h, :] = color
        shelf_tops.append(y0)

    for _ in range(products):
        top = shelf_tops[rng.integers(0, len(shelf_tops))]
        w = int(round(rng.uniform(0.06, 0.16) * size))
        h = int(round(rng.uniform(0.08, 0.2) * size))
        x0 = int(rng.integers(0, max(1, size - w)))
        y1 = top  # products stand on the shelf band
        y0 = max(0, y1 - h)
        color = rng.uniform(0.1, 0.95, size=3)
        img[y0:y1, x0 : x0 + w] = color
        # darker outline improves edge signal at small sizes
        img[y0:y1, x0 : min(x0 + 1, size)] = color * 0.5
        if y1 - 1 >= y0:
            img[y0, x0 : x0 + w] = color * 0.5

    return np.clip(img, 0.0, 1.0)


def generate_synthetic(spec: SyntheticSceneSpec) -> tuple[ImageBuffer, AnnotationRecord]:
    """Render and distort one synthetic sample; deterministic per scene spec.

    The returned image is the distorted view; the record holds exactly the
    displacement whose homography rectifies it back to the rendered scene.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    scene = ImageBuffer(_render_scene(rng, spec.size, spec.shelf_rows, spec.product_count))
    if spec.displacement is not None:
        side, d = spec.side, spec.displacement
        check_side_consistency(side, d)
    else:
        side, d = sample_displacement(rng, spec.size)
    H = geom.displacement_to_homography(d, spec.size, spec.size)
    distorted, _ = warp.warp_image(scene, geom.invert(H), spec.size, spec.size)
    record = AnnotationRecord(f"synth-{spec.seed:08d}", spec.size, spec.size, side, d)
    return distorted, record


def generate_dataset(
    root: str | Path,
    count: int,
    seed: int,
    size: int = 224,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    shelf_rows: int = 4,
    product_count: int = 12,
) -> dict[str, DatasetSplit]:
    """Write a synthetic dataset (images + manifests) under root.

    Sample i uses a child seed spawned from ``seed``, so identical
    arguments reproduce identical trees byte for byte.
    """
    if count < 1:
        raise InvariantViolation("count must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvariantViolation("split fractions must sum to 1")
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)

    seeds = [
        int(s.generate_state(1, dtype=np.uint64)[0])
        for s in np.random.SeedSequence(seed).spawn(count)
    ]
    n_train = int(round(count * fractions[0]))
    n_val = int(round(count * fractions[1]))

    buckets: dict[str, list[AnnotationRecord]] = {n: [] for n in SPLIT_NAMES}
    for i, child_seed in enumerate(seeds):
        spec = SyntheticSceneSpec(
            seed=child_seed, size=size, shelf_rows=shelf_rows, product_count=product_count
        )
        img, record = generate_synthetic(spec)
        record = replace(record, image_id=f"synth-{i:05d}")
        save_png(img, image_path(root, record.image_id))
        name = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        buckets[name].append(record)

    splits = {n: DatasetSplit(n, tuple(buckets[n])) for n in SPLIT_NAMES}
    save_dataset(splits, root)
    return splits


def load_split_arrays(
    root: str | Path, split: DatasetSplit, size: int, channels: int = 3
) -> tuple[np.ndarray, np.ndarray]:
    """Load a split as working-resolution arrays: images (N,size,size,C) and labels (N,4)."""
    if len(split) == 0:
        raise EmptySplit(f"split {split.name} is empty")
    imgs = np.empty((len(split), size, size, channels))
    labels = np.empty((len(split), 4))
    for i, rec in enumerate(split.records):
        img = load_png(image_path(root, rec.image_id))
        if channels == 1:
            img = img.to_grayscale()
        resized, d = resize_record(rec, img, size)
        imgs[i] = resized.data
        labels[i] = d.values
    return imgs, labels
