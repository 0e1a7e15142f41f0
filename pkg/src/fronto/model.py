"""Displacement regression network and its losses.

The backbone is a plain strided convnet: repeated [3x3 conv, stride 2,
zero padding 1, bias, GELU] blocks, global average pooling, and a linear
head.  It predicts either four corner values (default) or a three-value
multi-task output (side logit plus the two movable displacements).  All
math is float64 with explicit reverse-mode backward passes so every
gradient can be checked against finite differences.

The full-scale reference configuration this small stack stands in for is
a ConvNeXt-Nano backbone; the desk-scale default (4 blocks, widths
16/32/64/96) trains on CPU in minutes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import geom, warp
from .dataset import LEFT, RIGHT, SIDE_CORNERS
from .errors import (
    CheckpointMismatch,
    InvariantViolation,
    OutOfRange,
    ShapeMismatch,
)
from .geom import DisplacementVector
from .image import ImageBuffer, ValidityMask

HEAD_FOUR = "four_point"
HEAD_THREE = "three_point"

_GELU_K = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715

_CKPT_MAGIC = b"FRCK"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and loss switches.

    ``widths`` are the output channels of the stride-2 blocks; ``head``
    selects the four-value or three-value output; ``normalize`` maps
    regression targets to [-1, 1] (2*d/height) before the loss.
    """

    size: int = 224
    channels: int = 3
    widths: tuple[int, ...] = (16, 32, 64, 96)
    head: str = HEAD_FOUR
    photometric_weight: float = 1.0
    normalize: bool = True
    reference_backbone: str = "convnext-nano"  # full-scale stand-in, informational

    def __post_init__(self):
        if self.size < 8:
            raise InvariantViolation("input size must be at least 8")
        if self.channels not in (1, 3):
            raise InvariantViolation("channels must be 1 or 3")
        if not self.widths or any(w < 1 for w in self.widths):
            raise InvariantViolation("widths must be positive")
        if self.head not in (HEAD_FOUR, HEAD_THREE):
            raise InvariantViolation(f"unknown head {self.head!r}")
        if self.photometric_weight < 0:
            raise InvariantViolation("photometric weight must be >= 0")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def out_dim(self) -> int:
        return 4 if self.head == HEAD_FOUR else 3

    def fingerprint(self) -> str:
        widths = ",".join(str(w) for w in self.widths)
        return (
            f"fronto-net-v1;size={self.size};channels={self.channels};"
            f"widths={widths};head={self.head};normalize={int(self.normalize)}"
        )


@dataclass(frozen=True)
class ModelParams:
    """Flat float64 parameter vector plus its architecture fingerprint."""

    vector: np.ndarray
    fingerprint: str

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1:
            raise InvariantViolation("parameter vector must be 1-D")
        if not np.all(np.isfinite(v)):
            raise InvariantViolation("parameters must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class Prediction:
    """Raw head output: 4 corner values, or (side logit, top, bottom)."""

    head: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        expected = 4 if self.head == HEAD_FOUR else 3
        if v.shape != (expected,):
            raise ShapeMismatch(f"{self.head} prediction needs {expected} values, got {v.shape}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def normalize_targets(d: DisplacementVector, height: float) -> np.ndarray:
    """Map pixel displacements to [-1, 1]: d_norm = 2 d / height."""
    vals = d.values
    if np.any(np.abs(vals) > height / 2.0):
        raise OutOfRange(f"|d| exceeds height/2 = {height / 2.0}")
    return 2.0 * vals / height


def denormalize_targets(vals: np.ndarray, height: float) -> DisplacementVector:
    """Exact inverse of normalize_targets."""
    return DisplacementVector(np.asarray(vals, dtype=np.float64) * (height / 2.0))


def corner_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean squared error over the corner values."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"shapes differ: {pred.shape} vs {gt.shape}")
    return float(np.mean((pred - gt) ** 2))


def _gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.tanh(_GELU_K * (x + _GELU_A * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(x: np.ndarray, t: np.ndarray, dout: np.ndarray) -> np.ndarray:
    dt = _GELU_K * (1.0 + 3.0 * _GELU_A * x * x) * (1.0 - t * t)
    return dout * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 stride-2 convolution with zero padding 1, channels-last layout."""
    B, H, W, _ = x.shape
    xp = np.zeros((B, H + 2, W + 2, x.shape[3]))
    xp[:, 1 : H + 1, 1 : W + 1, :] = x
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (B, H, W, Cin, 3, 3)
    cols = win[:, ::2, ::2]
    cols = np.ascontiguousarray(cols.transpose(0, 1, 2, 4, 5, 3))  # (B, oh, ow, 3, 3, Cin)
    out = np.tensordot(cols, w, axes=([3, 4, 5], [0, 1, 2])) + b
    return out, cols


def _conv_backward(cols: np.ndarray, w: np.ndarray, dout: np.ndarray, x_shape):
    dw = np.tensordot(cols, dout, axes=([0, 1, 2], [0, 1, 2]))
    db = dout.sum(axis=(0, 1, 2))
    dcols = np.tensordot(dout, w, axes=([3], [3]))  # (B, oh, ow, 3, 3, Cin)
    B, H, W, Ci = x_shape
    oh, ow = dout.shape[1:3]
    gpad = np.zeros((B, H + 2, W + 2, Ci))
    for ky in range(3):
        for kx in range(3):
            gpad[:, ky : ky + 2 * oh : 2, kx : kx + 2 * ow : 2, :] += dcols[:, :, :, ky, kx, :]
    return dw, db, gpad[:, 1 : H + 1, 1 : W + 1, :]


class Network:
    """Parameter bookkeeping plus batched forward/backward passes."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.shapes: list[tuple[int, ...]] = []
        cin = cfg.channels
        for cout in cfg.widths:
            self.shapes.append((3, 3, cin, cout))
            self.shapes.append((cout,))
            cin = cout
        self.shapes.append((cin, cfg.out_dim))
        self.shapes.append((cfg.out_dim,))
        self.param_count = int(sum(np.prod(s) for s in self.shapes))

    def unpack(self, flat: np.ndarray) -> list[np.ndarray]:
        if flat.shape != (self.param_count,):
            raise ShapeMismatch(
                f"parameter vector has {flat.shape[0] if flat.ndim == 1 else 'bad'} entries, "
                f"architecture needs {self.param_count}"
            )
        views = []
        off = 0
        for s in self.shapes:
            n = int(np.prod(s))
            views.append(flat[off : off + n].reshape(s))
            off += n
        return views

    def init_vector(self, seed: int) -> np.ndarray:
        """He-normal conv weights, zero biases, zero head (initial output 0)."""
        rng = np.random.Generator(np.random.PCG64(seed))
        flat = np.zeros(self.param_count)
        views = self.unpack(flat)
        for i in range(0, 2 * len(self.cfg.widths), 2):
            wshape = self.shapes[i]
            fan_in = wshape[0] * wshape[1] * wshape[2]
            views[i][...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=wshape)
        return flat

    def forward(self, flat: np.ndarray, x: np.ndarray):
        """x: (B, size, size, channels) -> (B, out_dim) head values plus cache."""
        if x.ndim != 4 or x.shape[1:] != (self.cfg.size, self.cfg.size, self.cfg.channels):
            raise ShapeMismatch(
                f"input must be (B, {self.cfg.size}, {self.cfg.size}, {self.cfg.channels}), "
                f"got {x.shape}"
            )
        views = self.unpack(flat)
        cache = {"x_shapes": [], "cols": [], "pre": [], "tanh": []}
        h = x
        for bi in range(len(self.cfg.widths)):
            w, b = views[2 * bi], views[2 * bi + 1]
            cache["x_shapes"].append(h.shape)
            pre, cols = _conv_forward(h, w, b)
            act, t = _gelu(pre)
            cache["cols"].append(cols)
            cache["pre"].append(pre)
            cache["tanh"].append(t)
            h = act
        cache["gap_in_shape"] = h.shape
        feat = h.mean(axis=(1, 2))
        cache["feat"] = feat
        wh, bh = views[-2], views[-1]
        out = feat @ wh + bh
        cache["views"] = views
        return out, cache

    def backward(self, cache, dout: np.ndarray) -> np.ndarray:
        """Gradient of sum(dout * forward) with respect to the flat vector."""
        views = cache["views"]
        dflat = np.zeros(self.param_count)
        dviews = self.unpack(dflat)

        feat = cache["feat"]
        wh = views[-2]
        dviews[-2][...] = feat.T @ dout
        dviews[-1][...] = dout.sum(axis=0)
        dfeat = dout @ wh.T

        _, gh, gw, _ = cache["gap_in_shape"]
        dh = np.broadcast_to(dfeat[:, None, None, :] / (gh * gw), cache["gap_in_shape"])

        for bi in reversed(range(len(self.cfg.widths))):
            pre = cache["pre"][bi]
            t = cache["tanh"][bi]
            dpre = _gelu_backward(pre, t, dh)
            dw, db, dh = _conv_backward(
                cache["cols"][bi], views[2 * bi], dpre, cache["x_shapes"][bi]
            )
            dviews[2 * bi][...] = dw
            dviews[2 * bi + 1][...] = db
        return dflat


class Model:
    """Configured network bound to its loss and prediction helpers."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.net = Network(cfg)

    # -- parameters ---------------------------------------------------------

    def init_params(self, seed: int = 0) -> ModelParams:
        return ModelParams(self.net.init_vector(seed), self.cfg.fingerprint())

    def check_params(self, params: ModelParams) -> np.ndarray:
        if params.fingerprint != self.cfg.fingerprint():
            raise CheckpointMismatch(
                f"parameters built for {params.fingerprint!r}, "
                f"model expects {self.cfg.fingerprint()!r}"
            )
        if params.vector.shape != (self.net.param_count,):
            raise ShapeMismatch("parameter count does not match the architecture")
        return params.vector

    # -- inference ----------------------------------------------------------

    def _check_image(self, img: ImageBuffer) -> np.ndarray:
        if (img.height, img.width, img.channels) != (
            self.cfg.size,
            self.cfg.size,
            self.cfg.channels,
        ):
            raise ShapeMismatch(
                f"image is {img.height}x{img.width}x{img.channels}, model expects "
                f"{self.cfg.size}x{self.cfg.size}x{self.cfg.channels}"
            )
        return img.data

    def forward(self, params: ModelParams, img: ImageBuffer) -> Prediction:
        vec = self.check_params(params)
        out, _ = self.net.forward(vec, self._check_image(img)[None])
        return Prediction(self.cfg.head, out[0])

    def forward_batch(self, params: ModelParams, imgs: np.ndarray) -> np.ndarray:
        vec = self.check_params(params)
        out, _ = self.net.forward(vec, imgs)
        return out

    def decode(self, pred: Prediction) -> DisplacementVector:
        """Prediction to pixel displacements (per the normalization switch)."""
        if pred.head == HEAD_FOUR:
            if self.cfg.normalize:
                return denormalize_targets(pred.values, self.cfg.size)
            return DisplacementVector(pred.values)
        return decode_three_point(pred, self.cfg.size, normalized=self.cfg.normalize)

    def predict_displacement(self, params: ModelParams, img: ImageBuffer) -> DisplacementVector:
        return self.decode(self.forward(params, img))

    # -- losses -------------------------------------------------------------

    def _target_values(self, gt: DisplacementVector) -> np.ndarray:
        if self.cfg.normalize:
            return normalize_targets(gt, self.cfg.size)
        return gt.values.copy()

    def _head_to_pixels_factor(self) -> float:
        return self.cfg.size / 2.0 if self.cfg.normalize else 1.0

    def composite_loss(
        self, params: ModelParams, img: ImageBuffer, gt: DisplacementVector, lam: float
    ) -> tuple[float, np.ndarray]:
        """Corner loss plus weighted photometric loss; returns (loss, dparams)."""
        loss, grads, _ = self.composite_loss_batch(
            params, self._check_image(img)[None], gt.values[None], lam
        )
        return loss, grads

    def composite_loss_batch(
        self, params: ModelParams, imgs: np.ndarray, gts: np.ndarray, lam: float
    ) -> tuple[float, np.ndarray, dict]:
        """Mean composite loss over a batch and its parameter gradient.

        The photometric term compares the input warped by the predicted
        homography against the input warped by the ground-truth homography,
        over the intersection of the two validity masks.  Gradients reach
        the head through the corner loss directly and through the warp
        (bilinear sampling -> inverse matrix -> linear-solve adjoint).
        """
        if lam < 0:
            raise InvariantViolation("photometric weight must be >= 0")
        vec = self.check_params(params)
        if self.cfg.head != HEAD_FOUR:
            raise InvariantViolation("composite loss is defined for the four-point head")
        B = imgs.shape[0]
        out, cache = self.net.forward(vec, imgs)

        height = float(self.cfg.size)
        factor = self._head_to_pixels_factor()
        if self.cfg.normalize:
            tgt = 2.0 * gts / height
        else:
            tgt = gts

        diff = out - tgt
        corner_total = float(np.mean(diff**2, axis=1).sum())
        dout = 2.0 * diff / 4.0  # d(per-sample corner loss)/d(head values)

        photo_total = 0.0
        if lam > 0.0:
            for i in range(B):
                d_pred = DisplacementVector(out[i] * factor)
                d_true = DisplacementVector(gts[i])
                src = ImageBuffer(imgs[i])
                term, g_pixels = _photometric_term(src, d_pred, d_true)
                photo_total += term
                dout[i] += lam * g_pixels * factor
            photo_total = float(photo_total)

        loss = (corner_total + lam * photo_total) / B
        dflat = self.net.backward(cache, dout / B)
        parts = {"corner": corner_total / B, "photometric": photo_total / B}
        return loss, dflat, parts


def _photometric_term(
    src: ImageBuffer, d_pred: DisplacementVector, d_true: DisplacementVector
) -> tuple[float, np.ndarray]:
    """Masked photometric distance and its gradient w.r.t. d_pred (pixels)."""
    w, h = src.width, src.height
    H_pred = geom.displacement_to_homography(d_pred, w, h)
    H_true = geom.displacement_to_homography(d_true, w, h)
    warped_pred, mask_pred = warp.warp_image(src, H_pred, w, h)
    warped_true, mask_true = warp.warp_image(src, H_true, w, h)
    joint = mask_pred.intersect(mask_true)
    n = joint.count() * src.channels
    if n == 0:
        return 0.0, np.zeros(4)
    resid = warped_pred.data - warped_true.data
    masked = joint.bits[:, :, None]
    term = float(np.abs(resid[joint.bits]).sum() / n)
    upstream = np.where(masked, np.sign(resid), 0.0) / n
    grad = warp.warp_gradient(src, d_pred, upstream)
    return term, grad


def decode_three_point(
    pred: Prediction, height: float, normalized: bool = True
) -> DisplacementVector:
    """Three-value prediction to a side-consistent displacement vector.

    The logit picks the side (positive = Right); the two regression values
    fill that side's top and bottom corners, the other side stays zero.
    """
    if pred.head != HEAD_THREE:
        raise InvariantViolation("decode_three_point needs a three-point prediction")
    logit, top_val, bottom_val = pred.values
    side = RIGHT if logit > 0 else LEFT
    scale = height / 2.0 if normalized else 1.0
    d = np.zeros(4)
    top, bottom = SIDE_CORNERS[side]
    d[top] = top_val * scale
    d[bottom] = bottom_val * scale
    return DisplacementVector(d)


def three_point_loss(
    pred: Prediction,
    gt: DisplacementVector,
    side: str,
    height: float,
    normalized: bool = True,
) -> tuple[float, np.ndarray]:
    """Side classification plus two-value regression loss, and its gradient.

    Binary cross-entropy on the side logit (Right = 1) weighted 1.0, plus
    mean squared error over the true side's two displacement values.
    Returns (loss, gradient w.r.t. the three head values).
    """
    if pred.head != HEAD_THREE:
        raise InvariantViolation("three_point_loss needs a three-point prediction")
    logit, a, b = pred.values
    y = 1.0 if side == RIGHT else 0.0
    bce = float(np.logaddexp(0.0, logit) - y * logit)
    sig = 1.0 / (1.0 + np.exp(-logit))

    top, bottom = SIDE_CORNERS[side]
    scale = 2.0 / height if normalized else 1.0
    t_top = gt[top] * scale
    t_bottom = gt[bottom] * scale
    mse = 0.5 * ((a - t_top) ** 2 + (b - t_bottom) ** 2)

    grad = np.array([sig - y, (a - t_top), (b - t_bottom)])
    return float(bce + mse), grad


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, fingerprint, little-endian float64 vector.


def save_params(params: ModelParams, path: str | Path) -> None:
    fp = params.fingerprint.encode("utf-8")
    vec = params.vector.astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(fp)))
        fh.write(fp)
        fh.write(struct.pack("<Q", vec.shape[0]))
        fh.write(vec.tobytes())


def load_params(path: str | Path, expected_fingerprint: str | None = None) -> ModelParams:
    """Read a checkpoint; refuses fingerprint mismatches when one is expected."""
    raw = Path(path).read_bytes()
    if raw[:4] != _CKPT_MAGIC:
        raise CheckpointMismatch(f"{path}: not a parameter checkpoint")
    try:
        version = struct.unpack_from("<I", raw, 4)[0]
        if version != _CKPT_VERSION:
            raise CheckpointMismatch(f"{path}: unsupported checkpoint version {version}")
        (fp_len,) = struct.unpack_from("<I", raw, 8)
        fp = raw[12 : 12 + fp_len].decode("utf-8")
        off = 12 + fp_len
        (count,) = struct.unpack_from("<Q", raw, off)
        off += 8
        vec = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointMismatch(f"{path}: truncated or corrupt checkpoint: {exc}") from exc
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise CheckpointMismatch(
            f"checkpoint fingerprint {fp!r} does not match expected {expected_fingerprint!r}"
        )
    return ModelParams(vec, fp)


def config_from_fingerprint(fp: str) -> ModelConfig:
    """Reconstruct the architectural fields of a config from a fingerprint."""
    try:
        kind, *fields = fp.split(";")
        if kind != "fronto-net-v1":
            raise ValueError(f"unknown fingerprint kind {kind!r}")
        kv = dict(f.split("=", 1) for f in fields)
        return ModelConfig(
            size=int(kv["size"]),
            channels=int(kv["channels"]),
            widths=tuple(int(w) for w in kv["widths"].split(",")),
            head=kv["head"],
            normalize=bool(int(kv["normalize"])),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointMismatch(f"malformed fingerprint {fp!r}: {exc}") from exc
