"""Training loop: AdamW, per-epoch cosine learning rate, augmentation.

The loop is deliberately plain.  Each epoch shuffles the training set
with a seeded permutation, optionally replaces samples through the
displacement-pool augmentation, accumulates the composite loss over
fixed-order mini-batches, and evaluates mean corner error on the
validation split.  The best validation checkpoint wins.

Determinism contract: one epoch RNG drives both the permutation (drawn
first) and the per-sample augmentation draws (in visit order), so a run
is bitwise reproducible for a fixed seed and config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, DisplacementPool, augment_sample, derive_worker_rng
from .errors import InvariantViolation, NonFiniteGradient, OutOfRange, ParseError
from .geom import DisplacementVector
from .image import ImageBuffer
from .model import Model, ModelConfig, ModelParams, save_params

_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters.

    lr_min may equal 0 so that a zero-learning-rate run is expressible
    (handy for no-op sanity checks); otherwise 0 <= lr_min <= lr0.
    """

    epochs: int = 51
    batch_size: int = 80
    lr0: float = 1e-4
    lr_min: float = 1e-6
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    photometric_weight: float = 1.0
    augment_probability: float = 0.5
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise InvariantViolation("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvariantViolation("batch size must be >= 1")
        if not (0.0 <= self.lr_min <= self.lr0):
            raise InvariantViolation("need 0 <= lr_min <= lr0")
        if self.weight_decay < 0:
            raise InvariantViolation("weight decay must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvariantViolation("betas must lie in [0, 1)")
        if self.photometric_weight < 0:
            raise InvariantViolation("photometric weight must be >= 0")
        if not (0.0 <= self.augment_probability <= 1.0):
            raise InvariantViolation("augment probability must lie in [0, 1]")
        if self.eval_every < 1:
            raise InvariantViolation("eval_every must be >= 1")


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Cosine schedule evaluated per epoch, endpoints lr0 and lr_min."""
    if not (0 <= epoch < cfg.epochs):
        raise OutOfRange(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.epochs == 1:
        return cfg.lr0
    span = cfg.lr0 - cfg.lr_min
    return cfg.lr_min + span * (1.0 + math.cos(math.pi * epoch / (cfg.epochs - 1))) / 2.0


class OptimizerState:
    """First and second moment accumulators plus the step counter."""

    def __init__(self, param_count: int):
        self.m = np.zeros(param_count)
        self.v = np.zeros(param_count)
        self.step = 0


def optimizer_step(
    vector: np.ndarray,
    grads: np.ndarray,
    state: OptimizerState,
    lr: float,
    cfg: TrainConfig,
) -> np.ndarray:
    """One decoupled-weight-decay Adam update; returns the new vector.

    Bias-corrected moments, eps 1e-8 added after the square root, weight
    decay applied directly to the parameters (not folded into the
    gradients).  A non-finite gradient aborts before any state changes.
    """
    if grads.shape != vector.shape:
        raise InvariantViolation("gradient and parameter shapes differ")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("gradient contains NaN or infinity")
    state.step += 1
    t = state.step
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    m_hat = state.m / (1.0 - cfg.beta1**t)
    v_hat = state.v / (1.0 - cfg.beta2**t)
    return vector - lr * (m_hat / (np.sqrt(v_hat) + _ADAM_EPS) + cfg.weight_decay * vector)


def mean_corner_error(pred_px: np.ndarray, gt_px: np.ndarray) -> float:
    """Mean absolute corner displacement error in pixels, (N, 4) arrays."""
    pred_px = np.asarray(pred_px, dtype=np.float64)
    gt_px = np.asarray(gt_px, dtype=np.float64)
    if pred_px.shape != gt_px.shape or pred_px.ndim != 2 or pred_px.shape[1] != 4:
        raise InvariantViolation(f"need matching (N, 4) arrays, got {pred_px.shape} vs {gt_px.shape}")
    if pred_px.shape[0] == 0:
        raise InvariantViolation("cannot score an empty set")
    return float(np.mean(np.abs(pred_px - gt_px)))


@dataclass
class TrainResult:
    best_params: ModelParams
    final_params: ModelParams
    history: list[dict]
    best_epoch: int
    best_val_mce: float


def _head_outputs_to_pixels(model: Model, outs: np.ndarray) -> np.ndarray:
    if model.cfg.normalize:
        return outs * (model.cfg.size / 2.0)
    return outs


def validation_mce(model: Model, params: ModelParams, imgs: np.ndarray, labels: np.ndarray) -> float:
    outs = model.forward_batch(params, imgs)
    return mean_corner_error(_head_outputs_to_pixels(model, outs), labels)


def train(
    model: Model,
    train_imgs: np.ndarray,
    train_labels: np.ndarray,
    val_imgs: np.ndarray,
    val_labels: np.ndarray,
    cfg: TrainConfig,
    pool: DisplacementPool | None = None,
    checkpoint_path: str | Path | None = None,
    history_path: str | Path | None = None,
    progress=None,
) -> TrainResult:
    """Run the full loop; returns the best-validation and final parameters.

    ``pool`` enables displacement-pool augmentation with probability
    cfg.augment_probability; pass None to train on the raw images only.
    ``progress`` is an optional callable(dict) invoked after each epoch.
    """
    n = train_imgs.shape[0]
    if n == 0 or val_imgs.shape[0] == 0:
        raise InvariantViolation("training and validation splits must be non-empty")
    if train_labels.shape != (n, 4):
        raise InvariantViolation("labels must be (N, 4)")

    params = model.init_params(cfg.seed)
    vector = params.vector.copy()
    state = OptimizerState(model.net.param_count)
    aug_cfg = AugmentConfig(probability=cfg.augment_probability, seed=cfg.seed)

    history: list[dict] = []
    best_vec = vector.copy()
    best_epoch = 0
    best_val = math.inf

    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        rng = derive_worker_rng(cfg.seed, 0, epoch)
        perm = rng.permutation(n)

        epoch_imgs = train_imgs
        epoch_labels = train_labels
        if pool is not None and cfg.augment_probability > 0.0:
            epoch_imgs = train_imgs.copy()
            epoch_labels = train_labels.copy()
            for idx in perm:
                img_a, lab_a, applied = augment_sample(
                    ImageBuffer(train_imgs[idx]),
                    DisplacementVector(train_labels[idx]),
                    pool,
                    aug_cfg,
                    rng,
                )
                if applied:
                    epoch_imgs[idx] = img_a.data
                    epoch_labels[idx] = lab_a.values

        total = 0.0
        fresh = ModelParams(vector, model.cfg.fingerprint())
        for start in range(0, n, cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            loss, grads, _ = model.composite_loss_batch(
                fresh, epoch_imgs[sel], epoch_labels[sel], cfg.photometric_weight
            )
            if not math.isfinite(loss):
                raise NonFiniteGradient(f"loss became non-finite at epoch {epoch}")
            vector = optimizer_step(vector, grads, state, lr, cfg)
            fresh = ModelParams(vector, model.cfg.fingerprint())
            total += loss * len(sel)
        train_loss = total / n

        row = {"epoch": epoch, "lr": lr, "train_loss": train_loss}
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            val = validation_mce(model, fresh, val_imgs, val_labels)
            row["val_mce"] = val
            if val < best_val:
                best_val = val
                best_epoch = epoch
                best_vec = vector.copy()
                if checkpoint_path is not None:
                    save_params(ModelParams(best_vec, model.cfg.fingerprint()), checkpoint_path)
        history.append(row)
        if progress is not None:
            progress(row)

    if history_path is not None:
        Path(history_path).write_text(format_history(history, train_config_meta(cfg)))

    return TrainResult(
        best_params=ModelParams(best_vec, model.cfg.fingerprint()),
        final_params=ModelParams(vector, model.cfg.fingerprint()),
        history=history,
        best_epoch=best_epoch,
        best_val_mce=best_val,
    )


# ---------------------------------------------------------------------------
# Profiles


def paper_profile() -> tuple[ModelConfig, TrainConfig]:
    """Full-scale settings: 224 px RGB, 51 epochs, batch 80, lr 1e-4."""
    return (
        ModelConfig(size=224, channels=3),
        TrainConfig(),
    )


def desk_profile(seed: int = 0) -> tuple[ModelConfig, TrainConfig]:
    """Small-scale settings that train on a CPU in minutes: 56 px RGB."""
    return (
        ModelConfig(size=56, channels=3),
        TrainConfig(
            epochs=30,
            batch_size=16,
            lr0=3e-3,
            lr_min=1e-5,
            seed=seed,
        ),
    )


# ---------------------------------------------------------------------------
# Config and history text round-trips: "key = value" lines.

_CONFIG_FIELDS = (
    ("epochs", int),
    ("batch_size", int),
    ("lr0", float),
    ("lr_min", float),
    ("weight_decay", float),
    ("beta1", float),
    ("beta2", float),
    ("photometric_weight", float),
    ("augment_probability", float),
    ("seed", int),
    ("eval_every", int),
)


def format_train_config(cfg: TrainConfig) -> str:
    lines = [f"{name} = {getattr(cfg, name)!r}" for name, _ in _CONFIG_FIELDS]
    return "\n".join(lines) + "\n"


def parse_train_config(text: str) -> TrainConfig:
    values = {}
    casts = dict(_CONFIG_FIELDS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in casts:
            raise ParseError(f"unknown key {key!r}", lineno)
        try:
            values[key] = casts[key](val.strip())
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from exc
    try:
        return TrainConfig(**values)
    except TypeError as exc:
        raise ParseError(str(exc), 0) from exc


def train_config_meta(cfg: TrainConfig) -> dict:
    return {name: getattr(cfg, name) for name, _ in _CONFIG_FIELDS}


def format_history(rows: list[dict], meta: dict | None = None) -> str:
    """Plain text history: metadata first, then one block per epoch.

    Each block starts with its "epoch = N" line; floats use repr so the
    file round-trips exactly.
    """
    out = []
    for key, val in (meta or {}).items():
        out.append(f"{key} = {val!r}")
    for row in rows:
        out.append(f"epoch = {row['epoch']!r}")
        for key in ("lr", "train_loss", "val_mce"):
            if key in row:
                out.append(f"{key} = {row[key]!r}")
    return "\n".join(out) + "\n"


def parse_history(text: str) -> tuple[dict, list[dict]]:
    meta: dict = {}
    rows: list[dict] = []
    current: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        try:
            parsed = int(val) if key in ("epoch", "epochs", "batch_size", "seed", "eval_every") else float(val)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from exc
        if key == "epoch":
            current = {"epoch": parsed}
            rows.append(current)
        elif current is None:
            meta[key] = parsed
        else:
            current[key] = parsed
    return meta, rows


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
