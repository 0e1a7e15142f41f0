"""Command-line entry point.

One subcommand per pipeline stage.  Machine-readable results go to
stdout, logs to stderr.  Exit codes: 0 success, 1 usage error, 2 data or
invariant error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import augment as augment_mod
from . import dataset as dataset_mod
from . import evaluate as evaluate_mod
from . import geom, train as train_mod
from .errors import (
    AtInfinity,
    FrontoError,
    InvariantViolation,
    NonFiniteGradient,
    SingularSystem,
)
from .geom import DisplacementVector
from .image import load_png, save_png
from .model import Model, config_from_fingerprint, load_params
from .warp import warp_image

_NUMERIC_ERRORS = (SingularSystem, AtInfinity, NonFiniteGradient)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1, not argparse's default 2
        raise UsageError(message)


def _d_arg(text: str) -> DisplacementVector:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("expected four comma-separated values")
    try:
        return DisplacementVector.of(*(float(p) for p in parts))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _fractions_arg(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    try:
        return tuple(float(p) for p in parts)  # type: ignore[return-value]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _matrix_arg(text: str) -> geom.Homography:
    try:
        return geom.parse_homography(text)
    except FrontoError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _infer_side(d: DisplacementVector) -> str:
    if d[geom.TR] == 0.0 and d[geom.BR] == 0.0:
        return dataset_mod.LEFT
    return dataset_mod.RIGHT


def _load_model(checkpoint: str) -> tuple[Model, "object"]:
    params = load_params(checkpoint)
    model = Model(config_from_fingerprint(params.fingerprint))
    return model, params


# ---------------------------------------------------------------------------
# Subcommands


def cmd_convert(args) -> int:
    w = args.width if args.width is not None else args.size
    h = args.height if args.height is not None else args.size
    if args.d is not None:
        H = geom.displacement_to_homography(args.d, w, h)
        print(geom.serialize_homography(H))
    else:
        d, lossy = geom.homography_to_displacement(args.matrix, w, h)
        print(geom.serialize_displacement(d))
        if lossy:
            print("warning: matrix moves corners horizontally; conversion is lossy", file=sys.stderr)
    return 0


def cmd_rectify(args) -> int:
    img = load_png(args.image)
    if args.d is not None:
        d = args.d
    else:
        model, params = _load_model(args.checkpoint)
        work = img.to_grayscale() if model.cfg.channels == 1 else img
        s = geom.ScaleTransform.between(img.width, img.height, model.cfg.size, model.cfg.size)
        resized, _ = warp_image(work, geom.Homography(s.matrix()), model.cfg.size, model.cfg.size)
        d_work = model.predict_displacement(params, resized)
        d = dataset_mod.rescale_displacement(
            d_work, model.cfg.size, model.cfg.size, img.width, img.height
        )
    H = geom.displacement_to_homography(d, img.width, img.height)
    out, _ = warp_image(img, H, img.width, img.height)
    save_png(out, args.out)
    print(geom.serialize_displacement(d))
    return 0


def cmd_synth(args) -> int:
    splits = dataset_mod.generate_dataset(
        args.out, args.count, args.seed, size=args.size, fractions=args.fractions
    )
    for name in dataset_mod.SPLIT_NAMES:
        print(f"{name} = {len(splits[name])}")
    return 0


def cmd_stats(args) -> int:
    records = dataset_mod.load_manifest(args.manifest)
    split = dataset_mod.DatasetSplit("manifest", tuple(records))
    stats = dataset_mod.compute_stats(split)
    sys.stdout.write(stats.to_text())
    return 0


def cmd_augment_preview(args) -> int:
    splits = dataset_mod.load_dataset(args.root)
    record = None
    for split in splits.values():
        for r in split.records:
            if r.image_id == args.id:
                record = r
    if record is None:
        raise InvariantViolation(f"id {args.id!r} not found in any split")
    train_split = splits["train"]
    if len(train_split) == 0:
        raise InvariantViolation("train split is empty; no displacement pool")
    img = load_png(dataset_mod.image_path(args.root, record.image_id))
    entries = [
        dataset_mod.rescale_displacement(
            r.d, r.orig_width, r.orig_height, img.width, img.height
        ).values
        for r in train_split.records
    ]
    pool = augment_mod.DisplacementPool(np.stack(entries))
    cfg = augment_mod.AugmentConfig(probability=1.0, seed=args.seed)
    rng = augment_mod.derive_worker_rng(args.seed, 0, 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    new_records = []
    for i in range(args.count):
        aug_img, aug_d, applied = augment_mod.augment_sample(img, record.d, pool, cfg, rng)
        assert applied  # probability pinned to 1.0
        variant_id = f"{record.image_id}-aug-{i:02d}"
        save_png(aug_img, out / f"{variant_id}.png")
        new_records.append(
            dataset_mod.AnnotationRecord(
                variant_id, img.width, img.height, _infer_side(aug_d), aug_d
            )
        )
    dataset_mod.save_manifest(new_records, out / "manifest.txt")
    print(f"written = {args.count}")
    return 0


def _profile(args) -> tuple:
    if args.profile == "paper":
        model_cfg, train_cfg = train_mod.paper_profile()
    else:
        model_cfg, train_cfg = train_mod.desk_profile()
    return model_cfg, train_cfg


def cmd_train(args) -> int:
    model_cfg, train_cfg = _profile(args)
    if args.size is not None:
        model_cfg = replace(model_cfg, size=args.size)
    if args.no_normalize:
        model_cfg = replace(model_cfg, normalize=False)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.augment_probability is not None:
        overrides["augment_probability"] = args.augment_probability
    if args.photometric_weight is not None:
        overrides["photometric_weight"] = args.photometric_weight
    if overrides:
        train_cfg = replace(train_cfg, **overrides)

    splits = dataset_mod.load_dataset(args.root)
    train_imgs, train_labels = dataset_mod.load_split_arrays(
        args.root, splits["train"], model_cfg.size, model_cfg.channels
    )
    val_imgs, val_labels = dataset_mod.load_split_arrays(
        args.root, splits["val"], model_cfg.size, model_cfg.channels
    )
    pool = augment_mod.pool_from_labels(train_labels)
    model = Model(model_cfg)

    def progress(row):
        bits = [f"epoch {row['epoch']}", f"lr {row['lr']:.3e}", f"loss {row['train_loss']:.6f}"]
        if "val_mce" in row:
            bits.append(f"val_mce {row['val_mce']:.4f}")
        print("  ".join(bits), file=sys.stderr)

    result = train_mod.train(
        model,
        train_imgs,
        train_labels,
        val_imgs,
        val_labels,
        train_cfg,
        pool=pool,
        checkpoint_path=args.checkpoint,
        history_path=args.history,
        progress=progress if not args.quiet else None,
    )
    print(f"best_epoch = {result.best_epoch}")
    print(f"best_val_mce = {result.best_val_mce!r}")
    print(f"checkpoint = {args.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    splits = dataset_mod.load_dataset(args.root)
    split = splits[args.split]
    if args.predictions is not None:
        result = evaluate_mod.evaluate_prediction_file(
            args.predictions, split, args.size or 224, filter_threshold=args.threshold
        )
        name = args.name or Path(args.predictions).stem
    else:
        model, params = _load_model(args.checkpoint)
        imgs, labels = dataset_mod.load_split_arrays(
            args.root, split, model.cfg.size, model.cfg.channels
        )
        ids = [r.image_id for r in split.records]
        result = evaluate_mod.evaluate_model(
            model,
            params,
            imgs,
            labels,
            ids=ids,
            filter_threshold=args.threshold,
            with_latency=not args.no_latency,
        )
        name = args.name or "model"
    sys.stdout.write(evaluate_mod.emit_report([(name, result)]))
    print(f"excluded = {result.excluded}")
    print(f"aggregate_mce = {result.aggregate!r}")
    return 0


def cmd_bench(args) -> int:
    model, params = _load_model(args.checkpoint)
    splits = dataset_mod.load_dataset(args.root)
    imgs, _ = dataset_mod.load_split_arrays(
        args.root, splits[args.split], model.cfg.size, model.cfg.channels
    )
    mean_ms, median_ms = evaluate_mod.measure_latency(model, params, imgs)
    print(f"latency_mean_ms = {mean_ms!r}")
    print(f"latency_median_ms = {median_ms!r}")
    return 0


def cmd_serve(args) -> int:
    from . import service

    server = service.build_server(
        images_dir=args.images,
        store_path=args.store,
        checkpoint=args.checkpoint,
        port=args.port,
        size=args.size,
    )
    service.announce(server)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    p = _Parser(prog="fronto", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="displacements to matrix and back")
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--d", type=_d_arg, help="four comma-separated corner displacements")
    g.add_argument("--matrix", type=_matrix_arg, help="nine space-separated row-major entries")
    c.add_argument("--size", type=int, default=224, help="square frame size in pixels")
    c.add_argument("--width", type=int, help="frame width (overrides --size)")
    c.add_argument("--height", type=int, help="frame height (overrides --size)")
    c.set_defaults(func=cmd_convert)

    c = sub.add_parser("rectify", help="warp an image to fronto-parallel")
    c.add_argument("--image", required=True)
    c.add_argument("--out", required=True)
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--d", type=_d_arg, help="annotation displacements at image resolution")
    g.add_argument("--checkpoint", help="predict displacements with a trained model")
    c.set_defaults(func=cmd_rectify)

    c = sub.add_parser("synth", help="generate a synthetic dataset")
    c.add_argument("--out", required=True)
    c.add_argument("--count", type=int, required=True)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--size", type=int, default=224)
    c.add_argument("--fractions", type=_fractions_arg, default=(0.8, 0.1, 0.1))
    c.set_defaults(func=cmd_synth)

    c = sub.add_parser("stats", help="per-corner statistics of a manifest")
    c.add_argument("--manifest", required=True)
    c.set_defaults(func=cmd_stats)

    c = sub.add_parser("augment-preview", help="write augmented variants of one sample")
    c.add_argument("--root", required=True)
    c.add_argument("--id", required=True)
    c.add_argument("--count", type=int, default=4)
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_augment_preview)

    c = sub.add_parser("train", help="train the displacement regressor")
    c.add_argument("--root", required=True)
    c.add_argument(
        "--profile",
        choices=("paper", "desk"),
        required=True,
        help=(
            "paper: 224 px, 51 epochs, batch 80, lr 1e-4 cosine to 1e-6, "
            "weight decay 1e-4; desk: 56 px, 30 epochs, batch 16, lr 3e-3 cosine to 1e-5"
        ),
    )
    c.add_argument("--checkpoint", required=True, help="best-validation checkpoint output path")
    c.add_argument("--history", help="write per-epoch history to this file")
    c.add_argument("--seed", type=int)
    c.add_argument("--epochs", type=int)
    c.add_argument("--batch-size", type=int)
    c.add_argument("--size", type=int, help="override the profile input resolution")
    c.add_argument("--augment-probability", type=float)
    c.add_argument("--photometric-weight", type=float)
    c.add_argument("--no-normalize", action="store_true", help="regress raw pixel displacements")
    c.add_argument("--quiet", action="store_true")
    c.set_defaults(func=cmd_train)

    c = sub.add_parser("eval", help="score a checkpoint or prediction file")
    c.add_argument("--root", required=True)
    c.add_argument("--split", choices=dataset_mod.SPLIT_NAMES, default="test")
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--predictions", help="external prediction file: image_id d0 d1 d2 d3")
    c.add_argument("--threshold", type=float, help="exclude images with error above this")
    c.add_argument("--size", type=int, help="working resolution for prediction files")
    c.add_argument("--no-latency", action="store_true")
    c.add_argument("--name", help="method name in the report")
    c.set_defaults(func=cmd_eval)

    c = sub.add_parser("bench", help="forward-pass latency per the timing protocol")
    c.add_argument("--root", required=True)
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--split", choices=dataset_mod.SPLIT_NAMES, default="test")
    c.set_defaults(func=cmd_bench)

    c = sub.add_parser("serve", help="start the annotation HTTP service")
    c.add_argument("--images", required=True)
    c.add_argument("--store", required=True)
    c.add_argument("--checkpoint")
    c.add_argument("--port", type=int, default=8111)
    c.add_argument("--size", type=int, default=224, help="working resolution")
    c.set_defaults(func=cmd_serve)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except _NUMERIC_ERRORS as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (FrontoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
