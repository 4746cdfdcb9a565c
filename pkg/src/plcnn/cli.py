"""Command-line entry point: train, xval, ablate, predict, gradcam, synth,
and import-weights, plus the report files they emit.

Exit codes: 0 success, 1 configuration or input problems, 2 I/O and
ingestion failures, 3 numeric divergence during training.
"""

import argparse
import os
import sys

import numpy as np

from .checkpoint import (
    import_weights, load_checkpoint, read_mapping, save_checkpoint,
)
from .config import build_run_config
from .data import (
    Sample, load_dataset, load_image, make_synthetic, resize_bilinear, to_input,
)
from .errors import (
    ConfigurationError, DivergenceError, IngestionError, InputError,
)
from .evaluate import cross_validate, evaluate, split_ablation
from .gradcam import grad_cam, render_heatmap
from .graph import PRESETS, Network, build_network, predict
from .training import fit


def _write_text(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _train_kwargs(run):
    return dict(batch_size=run.batch, lr=run.lr, momentum=run.momentum,
                weight_decay=run.weight_decay, halving_period=run.halving_period,
                use_augment=run.augment, mean=run.norm_mean, std=run.norm_std,
                log_interval=run.log_interval)


def _load_run(args, need_data=True):
    keys = ("preset", "data", "k", "seed", "iterations", "batch", "lr",
            "momentum", "weight_decay", "halving_period", "out",
            "log_interval", "norm_mean", "norm_std", "fractions", "augment")
    overrides = {k: getattr(args, k, None) for k in keys}
    run = build_run_config(getattr(args, "config", None), overrides)
    if need_data and not run.data:
        raise ConfigurationError("a dataset root is required (--data)")
    return run


def _confusion_csv(report):
    names = report.confusion.class_names
    lines = ["true_class," + ",".join(names)]
    for name, row in zip(names, report.confusion.counts):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def _confidences_csv(report):
    lines = ["path,true,predicted,confidence,correct"]
    for rec in report.confidences:
        lines.append("%s,%d,%d,%.6f,%d" % (rec.path, rec.true_label,
                                           rec.predicted, rec.confidence,
                                           1 if rec.correct else 0))
    return "\n".join(lines) + "\n"


def _summary_text(report):
    lines = ["samples: %d" % report.confusion.total,
             "overall accuracy: %.1f" % report.overall_accuracy]
    for name, frac in zip(report.confusion.class_names,
                          report.per_class_accuracy):
        lines.append("%s: %.1f" % (name, 100.0 * frac))
    return "\n".join(lines) + "\n"


def _network_from_checkpoint(path, expect_preset=None):
    preset, iteration, params = load_checkpoint(path)
    if preset not in PRESETS:
        raise ConfigurationError(
            "checkpoint %s carries unknown preset %r" % (path, preset))
    if expect_preset and expect_preset != preset:
        raise ConfigurationError(
            "checkpoint preset %s does not match requested %s"
            % (preset, expect_preset))
    if "head.bias" not in params.values:
        raise ConfigurationError("checkpoint %s has no classifier head" % path)
    cfg = PRESETS[preset](len(params.values["head.bias"]))
    missing = [n for n in build_network(cfg, seed=0).values if n not in params.values]
    if missing:
        raise ConfigurationError(
            "checkpoint %s is missing parameters (%s, ...)" % (path, missing[0]))
    return Network(cfg, params), preset, iteration


def cmd_train(args):
    run = _load_run(args)
    print(run.echo())
    meta, samples = load_dataset(run.data, run.k, run.seed)
    cfg = PRESETS[run.preset](meta.num_classes)
    net = Network(cfg, build_network(cfg, seed=run.seed))
    os.makedirs(run.out, exist_ok=True)
    ckpt = os.path.join(run.out, "checkpoint.ckpt")

    def snapshot(iteration):
        save_checkpoint(ckpt, run.preset, iteration, net.params)

    state, rows = fit(net, samples, run.iterations, seed=run.seed,
                      on_checkpoint=snapshot,
                      checkpoint_interval=max(run.iterations // 5, 1),
                      **_train_kwargs(run))
    snapshot(state.iteration)
    log = ["iteration,lr,loss,accuracy"]
    log += ["%d,%g,%.6f,%.4f" % (r.iteration, r.lr, r.loss, r.accuracy)
            for r in rows]
    _write_text(os.path.join(run.out, "train_log.csv"), "\n".join(log) + "\n")
    last = rows[-1]
    print("trained %d iterations: loss %.4f, batch accuracy %.1f%%"
          % (state.iteration, last.loss, 100.0 * last.accuracy))
    print("checkpoint: %s" % ckpt)
    return 0


def cmd_xval(args):
    run = _load_run(args)
    print(run.echo())
    meta, samples = load_dataset(run.data, run.k, run.seed)
    cfg = PRESETS[run.preset](meta.num_classes)
    report, _ = cross_validate(cfg, samples, run.k, run.iterations,
                               class_names=meta.class_names, seed=run.seed,
                               **_train_kwargs(run))
    os.makedirs(run.out, exist_ok=True)
    _write_text(os.path.join(run.out, "confusion.csv"), _confusion_csv(report))
    _write_text(os.path.join(run.out, "confidences.csv"),
                _confidences_csv(report))
    _write_text(os.path.join(run.out, "summary.txt"), _summary_text(report))
    print("%d-fold accuracy: %.1f%% over %d samples"
          % (run.k, report.overall_accuracy, report.confusion.total))
    return 0


def cmd_ablate(args):
    run = _load_run(args)
    print(run.echo())
    meta, samples = load_dataset(run.data, k=1, seed=run.seed)
    cfg = PRESETS[run.preset](meta.num_classes)
    table = split_ablation(cfg, samples, run.fractions, run.seed,
                           run.iterations, class_names=meta.class_names,
                           **_train_kwargs(run))
    os.makedirs(run.out, exist_ok=True)
    lines = ["train_fraction,accuracy"]
    lines += ["%g,%.1f" % (frac, acc) for frac, acc in table]
    _write_text(os.path.join(run.out, "ablation.csv"), "\n".join(lines) + "\n")
    for frac, acc in table:
        print("train fraction %g: accuracy %.1f%%" % (frac, acc))
    return 0


def _image_paths(path):
    if os.path.isdir(path):
        files = sorted(os.path.join(path, f) for f in os.listdir(path)
                       if f.lower().endswith(".png"))
        if not files:
            raise InputError("no PNG images under %s" % path)
        return files
    return [path]


def cmd_predict(args):
    run = _load_run(args, need_data=False)
    net, _, _ = _network_from_checkpoint(args.checkpoint, args.preset)
    paths = _image_paths(args.path)
    for start in range(0, len(paths), run.batch):
        chunk = paths[start:start + run.batch]
        x = np.stack([to_input(Sample(load_image(p), 0, p), net.cfg.input_dims,
                               run.norm_mean, run.norm_std) for p in chunk])
        labels, confs = predict(net.forward(x, mode="inference"))
        for p, label, conf in zip(chunk, labels, confs):
            print("%s,%d,%.6f" % (p, label, conf))
    return 0


def cmd_gradcam(args):
    run = _load_run(args, need_data=False)
    net, _, _ = _network_from_checkpoint(args.checkpoint, args.preset)
    sample = Sample(load_image(args.path), 0, args.path)
    x = to_input(sample, net.cfg.input_dims, run.norm_mean, run.norm_std)
    amap = grad_cam(net, x, target_class=args.target_class,
                    branch=args.branch, upsample=True)
    os.makedirs(run.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.path))[0]
    suffix = "_%s" % args.branch if args.branch else ""
    out = os.path.join(run.out, "cam_%s_class%d%s.png"
                       % (stem, amap.target_class, suffix))
    base = resize_bilinear(sample.image.data[0], net.cfg.input_dims[1:])
    render_heatmap(amap, base, out)
    print("%s (class %d)" % (out, amap.target_class))
    return 0


def cmd_synth(args):
    h, _, w = args.dims.partition("x")
    try:
        dims = (int(h), int(w))
    except ValueError:
        raise ConfigurationError("dims must look like 64x64, got %r" % args.dims)
    make_synthetic(args.out, args.classes, args.per_class, dims, args.seed)
    print("wrote %d classes x %d images under %s"
          % (args.classes, args.per_class, args.out))
    return 0


def cmd_import_weights(args):
    preset, _, source = load_checkpoint(args.checkpoint)
    if preset not in PRESETS:
        raise ConfigurationError("unknown preset %r in %s"
                                 % (preset, args.checkpoint))
    if "head.bias" not in source.values:
        raise ConfigurationError(
            "checkpoint %s has no classifier head" % args.checkpoint)
    cfg = PRESETS[preset](len(source.values["head.bias"]))
    params = build_network(cfg, seed=args.seed)
    mapping = read_mapping(args.mapping) if args.mapping else []
    params, unmapped = import_weights(params, source, mapping)
    save_checkpoint(args.out, preset, 0, params)
    print("wrote %s with %d mapped tensors" % (args.out, len(mapping)))
    for name in unmapped:
        print("unmapped: %s" % name)
    return 0


def _add_run_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--data", help="dataset root (class-per-directory tree)")
    p.add_argument("--k", type=int, help="fold count")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--halving-period", type=int, dest="halving_period")
    p.add_argument("--out", help="output directory")
    p.add_argument("--log-interval", type=int, dest="log_interval")
    p.add_argument("--no-augment", action="store_const", const=False,
                   dest="augment", help="disable training augmentation")
    p.add_argument("--norm-mean", dest="norm_mean", type=_floats,
                   help="comma-separated per-channel mean")
    p.add_argument("--norm-std", dest="norm_std", type=_floats,
                   help="comma-separated per-channel std")


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="plcnn",
        description="Three-branch CNN for subcellular protein localization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a dataset tree")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("xval", help="k-fold cross-validation")
    _add_run_flags(p)
    p.set_defaults(func=cmd_xval)

    p = sub.add_parser("ablate", help="train-fraction ablation table")
    _add_run_flags(p)
    p.add_argument("--fractions", type=_floats,
                   help="comma-separated train fractions")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("predict", help="classify an image or directory")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("path", help="PNG file or directory of PNGs")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcam", help="write an attention heatmap")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class", type=int, dest="target_class",
                   help="target class (default: argmax)")
    p.add_argument("--branch", choices=("dense", "residual", "plain"))
    p.add_argument("path", help="PNG file")
    p.set_defaults(func=cmd_gradcam)

    p = sub.add_parser("synth", help="generate the synthetic corpus")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=12, dest="per_class")
    p.add_argument("--dims", default="64x64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("import-weights",
                       help="seed a fresh init from checkpoint tensors")
    p.add_argument("--checkpoint", required=True, help="source checkpoint")
    p.add_argument("--mapping", help="file of `source target` name pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.set_defaults(func=cmd_import_weights)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, InputError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except IngestionError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
