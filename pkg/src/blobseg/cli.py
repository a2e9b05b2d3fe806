"""Command line interface.

Subcommands: ``synth`` (dataset generation), ``pipeline`` (mask pair or pose
file to label/blob maps), ``train``, ``eval``, ``gradcheck``, ``rf``
(receptive fields), and ``shapes`` (per-layer output shapes and parameter
count). Every command exits 0 on success; failures print one line of the
form ``error: <category>: <message>`` and exit nonzero.

Configuration comes from built-in desk-scale defaults, optionally overlaid
by a ``key=value`` file (``--config``), overlaid in turn by command-line
flags.
"""

import argparse
import os
import sys

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import BlobsegError, ConfigError, FormatError
from .estimator import ConsensusSegmenter, OcclusionLabeler
from .geometry import full_face_mask, load_pose_file
from .losses import (
    LossConfig,
    blob_marginalized_ce,
    consensus_loss,
    gradcheck,
    pixelwise_ce,
)
from .metrics import (
    confusion,
    merge_two_class,
    scores_csv,
    scores_row,
    sparsity,
    superpixel_accuracy,
)
from .net import (
    LayerStack,
    REFERENCE_CLAIMED_RF,
    compact_architecture,
    format_descriptor,
    param_count,
    parse_descriptor,
    receptive_field,
    reference_architecture,
    shape_check,
)
from .synth import load_split, scene_paths, write_dataset
from .tensorio import read_int_tensor, read_pgm, write_int_tensor, write_pgm

CONFIG_FLAGS = (
    ("seed", int),
    ("image_size", int),
    ("train_size", int),
    ("val_size", int),
    ("test_size", int),
    ("loss", str),
    ("alpha", float),
    ("beta", float),
    ("learning_rate", float),
    ("lr_floor", float),
    ("plateau_factor", float),
    ("plateau_patience", int),
    ("epochs", int),
    ("batch_size", int),
    ("base_channels", int),
    ("dropout_rate", float),
    ("noise", float),
    ("max_occluders", int),
)
CONFIG_BOOL_FLAGS = ("flip_augment", "split_blob_components")


def _add_config_flags(parser):
    parser.add_argument("--config", help="key=value configuration file")
    for name, caster in CONFIG_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", type=caster, default=None)
    for name in CONFIG_BOOL_FLAGS:
        parser.add_argument(
            f"--{name.replace('_', '-')}", choices=("on", "off"), default=None
        )


def _resolve_config(args):
    cfg = ExperimentConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    overrides = {}
    for name, _ in CONFIG_FLAGS:
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    for name in CONFIG_BOOL_FLAGS:
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value == "on"
    return cfg.replace(**overrides)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    cfg = _resolve_config(args)
    files = write_dataset(args.out, cfg)
    print(f"wrote {len(files)} files under {args.out}")
    return 0


def cmd_pipeline(args):
    if (args.full is None) == (args.pose is None):
        raise ConfigError("provide exactly one of --full or --pose")
    teacher = read_pgm(args.teacher, binarize=True)
    if args.full:
        full = read_pgm(args.full, binarize=True)
    else:
        pose, contour = load_pose_file(args.pose)
        full = full_face_mask(pose, contour, *teacher.shape)
    labeler = OcclusionLabeler()
    labels, blobs = labeler.label_pair(full, teacher)
    write_pgm(labels, args.out_labels)
    write_int_tensor(blobs, args.out_blobs)
    print(f"labels -> {args.out_labels}; blobs -> {args.out_blobs}")
    return 0


def _history_writer(path):
    fh = open(path, "w", encoding="ascii")
    fh.write("epoch,loss,val_recall,val_sparsity,learning_rate\n")
    fh.flush()

    def hook(row):
        fh.write(
            f"{row['epoch']},{row['loss']:.12g},{row['val_recall']:.12g},"
            f"{row['val_sparsity']:.12g},{row['learning_rate']:.12g}\n"
        )
        fh.flush()

    return fh, hook


def cmd_train(args):
    cfg = _resolve_config(args)
    X, y, blobs = load_split(args.data, "train")
    X_val, y_val, _ = load_split(args.data, "val")
    model = ConsensusSegmenter(
        loss=cfg.loss,
        alpha=cfg.alpha,
        beta=cfg.beta,
        learning_rate=cfg.learning_rate,
        lr_floor=cfg.lr_floor,
        plateau_factor=cfg.plateau_factor,
        plateau_patience=cfg.plateau_patience,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        base_channels=cfg.base_channels,
        dropout_rate=cfg.dropout_rate,
        flip_augment=cfg.flip_augment,
        split_blobs=cfg.split_blob_components,
        seed=cfg.seed,
    )
    use_blobs = blobs if cfg.loss != "pixelwise" else None
    fh = hook = None
    if args.log:
        fh, hook = _history_writer(args.log)
    try:
        model.fit(X, y, blobs=use_blobs, X_val=X_val, y_val=y_val, log_hook=hook)
    except BlobsegError as exc:
        if fh is not None:
            fh.write(f"# aborted: {exc.category}: {exc}\n")
            fh.close()
        raise
    if fh is not None:
        fh.close()
    model.save(args.out)
    best = model.history_[model.best_epoch_]
    print(
        f"checkpoint -> {args.out} (best epoch {model.best_epoch_}, "
        f"val recall {best['val_recall']:.4f})"
    )
    return 0


def cmd_eval(args):
    stack = LayerStack.load(args.checkpoint)
    X, y, _ = load_split(args.data, args.split)
    num_classes = 2 if args.two_class else 3
    model = ConsensusSegmenter(num_classes=3)
    model.stack_ = stack
    preds = model.predict(X)
    gts = list(y)
    if args.two_class:
        preds = [merge_two_class(p) for p in preds]
        gts = [merge_two_class(g) for g in gts]
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(preds, gts):
        cm += confusion(p, g, num_classes)
    spars = sparsity(list(preds), gts)
    sp_acc = None
    if args.superpixels:
        sp_scores = []
        for i in range(len(X)):
            stem = os.path.join(args.superpixels, f"scene_{i:05d}")
            sp_map = read_int_tensor(stem + ".sp.bin")
            sp_gt = read_int_tensor(stem + ".spgt.bin")
            sp_scores.append(superpixel_accuracy(preds[i], sp_gt, sp_map))
        sp_acc = float(np.mean(sp_scores))
    row = scores_row(args.method, args.split, cm, spars, sp_acc)
    text = scores_csv([row])
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_gradcheck(args):
    loss_cfg = LossConfig(alpha=args.alpha, beta=args.beta)
    rng = np.random.default_rng(args.seed)
    kinds = {
        "pixelwise": lambda z, y, c: pixelwise_ce(z, y, loss_cfg),
        "blob_marginalized": lambda z, y, c: blob_marginalized_ce(z, y, c, loss_cfg),
        "consensus": lambda z, y, c: consensus_loss(z, y, c, loss_cfg),
    }
    fn = kinds[args.loss]
    worst = 0.0
    for i in range(args.instances):
        z, y, c = random_loss_instance(rng, size=args.size)
        report = gradcheck(lambda t: fn(t, y, c), z, step=args.step,
                           tolerance=args.tolerance)
        worst = max(worst, report.max_rel_error)
        status = "ok" if report.passed else "FAIL"
        print(
            f"instance {i}: max_rel_error={report.max_rel_error:.3e} "
            f"worst={report.worst_coordinate} {status}"
        )
        if not report.passed:
            print(f"failing coordinates: {report.failures[:8]}")
            return 1
    print(f"gradcheck passed: {args.instances} instances, worst {worst:.3e}")
    return 0


def random_loss_instance(rng, size=8, num_classes=3, max_blobs=6):
    """Random logits, a blob partition from nearest seed, and pure labels."""
    z = rng.uniform(-2.0, 2.0, size=(num_classes, size, size))
    n_blobs = int(rng.integers(1, max_blobs + 1))
    seeds = rng.uniform(0, size, size=(n_blobs, 2))
    ys, xs = np.mgrid[0:size, 0:size]
    d2 = (ys[None] + 0.5 - seeds[:, 0, None, None]) ** 2 + (
        xs[None] + 0.5 - seeds[:, 1, None, None]
    ) ** 2
    blob_map = np.argmin(d2, axis=0).astype(np.int64)
    classes = rng.integers(0, num_classes, size=n_blobs)
    labels = classes[blob_map]
    return z, labels, blob_map


def _stack_from_args(args):
    if args.builtin == "reference":
        return reference_architecture()
    if args.builtin == "compact":
        return compact_architecture()
    if not args.descriptor:
        raise ConfigError("provide --descriptor FILE or --builtin NAME")
    with open(args.descriptor, "r", encoding="utf-8") as fh:
        return parse_descriptor(fh.read())


def cmd_rf(args):
    specs = _stack_from_args(args)
    records, final = receptive_field(specs)
    for i, rec in enumerate(records, 1):
        rf_h, rf_w = rec.rf
        jh, jw = rec.jump
        print(f"layer {i:3d} {rec.kind:<10} rf=({rf_h}, {rf_w}) jump=({jh}, {jw})")
    print(f"final receptive field: {final[0]} x {final[1]} input pixels")
    if args.builtin == "reference":
        delta = final[0] - REFERENCE_CLAIMED_RF
        print(
            f"documented claim: {REFERENCE_CLAIMED_RF}; traced: {final[0]}; "
            f"delta: {delta:+d} (reported as a finding, not an error)"
        )
    return 0


def cmd_shapes(args):
    specs = _stack_from_args(args)
    shapes = shape_check(specs, (args.channels, args.height, args.width))
    for i, (s, shp) in enumerate(zip(specs, shapes), 1):
        print(f"layer {i:3d} {s.kind:<10} -> {shp[0]} x {shp[1]} x {shp[2]}")
    print(f"total parameters: {param_count(specs)}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="blobseg",
        description="Blob-consensus face segmentation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="masks or pose file -> labels and blobs")
    p.add_argument("--full", help="full-face mask PGM")
    p.add_argument("--pose", help="pose + contour text file (instead of --full)")
    p.add_argument("--teacher", required=True, help="teacher segmentation PGM")
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-blobs", required=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("train", help="train a segmenter on a dataset")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch CSV log path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", help="metrics CSV path")
    p.add_argument("--method", default="blobseg")
    p.add_argument("--two-class", action="store_true",
                   help="merge occlusion and background into non-face")
    p.add_argument("--superpixels",
                   help="directory with scene_XXXXX.sp.bin / .spgt.bin maps")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--loss", default="consensus",
                   choices=("pixelwise", "blob_marginalized", "consensus"))
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--beta", type=float, default=5.0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("rf", help="receptive fields of a layer stack")
    p.add_argument("--descriptor", help="descriptor text file")
    p.add_argument("--builtin", choices=("reference", "compact"))
    p.set_defaults(func=cmd_rf)

    p = sub.add_parser("shapes", help="per-layer output shapes and parameters")
    p.add_argument("--descriptor", help="descriptor text file")
    p.add_argument("--builtin", choices=("reference", "compact"))
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=128)
    p.set_defaults(func=cmd_shapes)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BlobsegError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
