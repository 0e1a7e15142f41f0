"""Evaluation protocol: mean corner error, outlier filtering, latency.

Corner error is the mean over the four corners of the Euclidean distance
between predicted and ground-truth corner positions; with x fixed by the
parameterization this reduces to the mean absolute displacement
difference.  Optional filtering excludes images whose error exceeds a
pixel threshold (used when scoring external baseline prediction files).
Latency timing covers the forward pass only: 10 warm-up iterations are
discarded and 100 are timed, sequentially, one image at a time.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetSplit, rescale_displacement
from .errors import InvariantViolation, MissingPrediction, ParseError
from .geom import DisplacementVector, parse_displacement, serialize_displacement
from .model import Model, ModelParams

LATENCY_WARMUP = 10
LATENCY_TIMED = 100

MCE_HEADER = "Mean Corner Error (pixels)"
SPEED_HEADER = "Inference Speed (ms)"


def mce(pred: DisplacementVector, gt: DisplacementVector) -> float:
    """Mean corner error in pixels between two displacement vectors."""
    return float(np.mean(np.abs(pred.values - gt.values)))


@dataclass(frozen=True)
class EvalResult:
    """Per-image errors plus the aggregate over images passing the filter.

    per_image keeps every (id, error) pair regardless of filtering;
    aggregate is the mean over included images only.
    """

    per_image: tuple[tuple[str, float], ...]
    aggregate: float
    excluded: int
    latency_mean_ms: float | None = None
    latency_median_ms: float | None = None


def evaluate_errors(
    ids: list[str],
    errors: np.ndarray,
    filter_threshold: float | None = None,
    latency: tuple[float, float] | None = None,
) -> EvalResult:
    errors = np.asarray(errors, dtype=np.float64)
    if len(ids) != errors.shape[0] or errors.ndim != 1:
        raise InvariantViolation("ids and errors must align")
    if errors.shape[0] == 0:
        raise InvariantViolation("cannot evaluate an empty set")
    included = np.ones(errors.shape[0], dtype=bool)
    if filter_threshold is not None:
        included = errors <= filter_threshold
    if not included.any():
        raise InvariantViolation("filter excluded every image")
    mean_ms, median_ms = latency if latency is not None else (None, None)
    return EvalResult(
        per_image=tuple(zip(ids, (float(e) for e in errors))),
        aggregate=float(errors[included].mean()),
        excluded=int((~included).sum()),
        latency_mean_ms=mean_ms,
        latency_median_ms=median_ms,
    )


def measure_latency(
    model: Model,
    params: ModelParams,
    imgs: np.ndarray,
    warmup: int = LATENCY_WARMUP,
    timed: int = LATENCY_TIMED,
) -> tuple[float, float]:
    """Single-image forward timings in ms: (warm mean, warm median).

    Runs strictly sequentially, cycling through ``imgs``; the first
    ``warmup`` iterations never enter the statistics.
    """
    n = imgs.shape[0]
    if n == 0:
        raise InvariantViolation("need at least one image to time")
    vec = model.check_params(params)
    samples = []
    for i in range(warmup + timed):
        x = imgs[i % n : i % n + 1]
        t0 = time.perf_counter()
        model.net.forward(vec, x)
        dt = time.perf_counter() - t0
        if i >= warmup:
            samples.append(dt * 1000.0)
    return float(statistics.fmean(samples)), float(statistics.median(samples))


def predict_batch_pixels(model: Model, params: ModelParams, imgs: np.ndarray) -> np.ndarray:
    """Model displacements in pixels for a stack of working-size images."""
    outs = model.forward_batch(params, imgs)
    if model.cfg.head != "four_point":
        raise InvariantViolation("batch prediction expects the four-point head")
    return outs * (model.cfg.size / 2.0) if model.cfg.normalize else outs


def evaluate_model(
    model: Model,
    params: ModelParams,
    imgs: np.ndarray,
    gt_px: np.ndarray,
    ids: list[str] | None = None,
    filter_threshold: float | None = None,
    with_latency: bool = True,
) -> EvalResult:
    """Score a model on working-resolution images with pixel labels."""
    n = imgs.shape[0]
    if n == 0:
        raise InvariantViolation("cannot evaluate an empty split")
    if ids is None:
        ids = [f"img-{i:05d}" for i in range(n)]
    pred = predict_batch_pixels(model, params, imgs)
    errors = np.mean(np.abs(pred - np.asarray(gt_px, dtype=np.float64)), axis=1)
    latency = measure_latency(model, params, imgs) if with_latency else None
    return evaluate_errors(ids, errors, filter_threshold, latency)


# ---------------------------------------------------------------------------
# Prediction files: `image_id d0 d1 d2 d3`, displacements at working
# resolution, one line per image.


def save_prediction_file(path: str | Path, rows: list[tuple[str, DisplacementVector]]) -> None:
    lines = [f"{image_id} {serialize_displacement(d)}" for image_id, d in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def load_prediction_file(path: str | Path) -> dict[str, DisplacementVector]:
    preds: dict[str, DisplacementVector] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ParseError(f"expected 'image_id d0 d1 d2 d3', got {len(parts)} fields", lineno)
        if parts[0] in preds:
            raise ParseError(f"duplicate id {parts[0]!r}", lineno)
        try:
            preds[parts[0]] = parse_displacement(" ".join(parts[1:]))
        except Exception as exc:
            raise ParseError(str(exc), lineno) from exc
    return preds


def evaluate_prediction_file(
    path: str | Path,
    split: DatasetSplit,
    working_size: int,
    filter_threshold: float | None = None,
) -> EvalResult:
    """Score an external prediction file against a split's ground truth.

    Ground-truth displacements are re-expressed at the working resolution
    before comparison; every split id must appear in the file.
    """
    if len(split) == 0:
        raise InvariantViolation("cannot evaluate an empty split")
    preds = load_prediction_file(path)
    ids = []
    errors = []
    for rec in split.records:
        if rec.image_id not in preds:
            raise MissingPrediction(f"no prediction for {rec.image_id!r}")
        gt = rescale_displacement(
            rec.d, rec.orig_width, rec.orig_height, working_size, working_size
        )
        ids.append(rec.image_id)
        errors.append(mce(preds[rec.image_id], gt))
    return evaluate_errors(ids, np.array(errors), filter_threshold)


def emit_report(entries: list[tuple[str, EvalResult]]) -> str:
    """Aligned text table: method, corner error, latency, in input order."""
    if not entries:
        raise InvariantViolation("report needs at least one result")
    headers = ("Method", MCE_HEADER, SPEED_HEADER)
    rows = []
    for name, res in entries:
        lat = f"{res.latency_mean_ms:.3f}" if res.latency_mean_ms is not None else "-"
        rows.append((name, f"{res.aggregate:.3f}", lat))
    widths = [max(len(headers[i]), max(len(r[i]) for r in rows)) for i in range(3)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip(),
        "  ".join("-" * widths[i] for i in range(3)),
    ]
    for r in rows:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(3)).rstrip())
    return "\n".join(lines) + "\n"
